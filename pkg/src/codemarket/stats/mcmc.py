"""Metropolis curve fitting under Gaussian noise.

Three model families are supported (power law, exponential with a doubling
time, and a four-parameter logistic step). The sampler starts from a
least-squares solution, tunes a single proposal scale during a short
pre-run, freezes it, and then runs the production chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import optimize

BURN_IN_FRACTION = 0.2
TARGET_ACCEPTANCE = (0.2, 0.4)


def _power_law(p, x):
    return p[0] * np.power(x, p[1])


def _exponential(p, x):
    return p[0] * np.exp2(x / p[1])


def _sigmoid(p, x):
    a, b, d0, tau = p
    with np.errstate(over="ignore"):  # exp -> inf gives the correct limit a
        return a + b / (1.0 + np.exp(-(x - d0) / tau))


@dataclass(frozen=True)
class CurveModel:
    name: str
    params: tuple[str, ...]
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    # parameters constrained to be strictly positive
    positive: tuple[str, ...] = ()


MODELS: dict[str, CurveModel] = {
    "power_law": CurveModel("power_law", ("c", "alpha"), _power_law),
    "exponential": CurveModel("exponential", ("c", "doubling"), _exponential, ("doubling",)),
    "sigmoid": CurveModel("sigmoid", ("a", "b", "d0", "tau"), _sigmoid, ("tau",)),
}


@dataclass
class FitResult:
    model: str
    params: tuple[str, ...]
    mean: dict[str, float]
    sd: dict[str, float]
    acceptance_rate: float
    n_steps: int
    seed: int
    sigma: float
    burn_in: int
    proposal_scale: float
    chain: np.ndarray = field(repr=False)
    start: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "model": self.model,
            "mean": self.mean,
            "sd": self.sd,
            "acceptance_rate": self.acceptance_rate,
            "n_steps": self.n_steps,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "sigma": self.sigma,
            "proposal_scale": self.proposal_scale,
            "start": self.start,
        }


def _initial_guess(model: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if model == "power_law":
        ok = (x > 0) & (y > 0)
        if ok.sum() >= 2:
            slope, icept = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
            return np.array([math.exp(icept), slope])
        return np.array([float(np.mean(y)) or 1.0, -1.0])
    if model == "exponential":
        ok = y > 0
        if ok.sum() >= 2:
            slope, icept = np.polyfit(x[ok], np.log2(y[ok]), 1)
            if slope != 0:
                return np.array([2.0**icept, 1.0 / slope])
        return np.array([float(np.mean(y)) or 1.0, float(np.ptp(x)) or 1.0])
    if model == "sigmoid":
        order = np.argsort(x)
        xs, ys = x[order], y[order]
        k = max(1, xs.size // 5)
        lo, hi = float(np.mean(ys[:k])), float(np.mean(ys[-k:]))
        half = 0.5 * (lo + hi)
        crossing = np.flatnonzero((ys - half) * np.sign(hi - lo or 1.0) >= 0)
        d0 = float(xs[crossing[0]]) if crossing.size else float(np.median(xs))
        tau = max(float(np.ptp(xs)) / 20.0, 1e-6)
        return np.array([lo, hi - lo, d0, tau])
    raise KeyError(model)


def _default_priors(model: CurveModel, start: np.ndarray, x: np.ndarray) -> dict[str, tuple[float, float]]:
    # broad zero-centred normals; location-like parameters get an x-scaled width
    xscale = max(float(np.ptp(x)), 1.0)
    priors = {}
    for name, value in zip(model.params, start):
        width = 100.0 * max(abs(float(value)), 1.0)
        if name in ("d0", "tau", "doubling"):
            width = max(width, 100.0 * xscale)
        priors[name] = (0.0, width)
    return priors


def _support(model: str, x: np.ndarray) -> dict[str, tuple[float, float]]:
    """Hard parameter bounds; a sigmoid's midpoint and width must be resolvable by the data."""
    if model == "sigmoid":
        span = max(float(np.ptp(x)), 1e-12)
        return {"d0": (float(x.min()), float(x.max())), "tau": (1e-9 * span, span)}
    return {}


def mcmc_curve_fit(
    model: str,
    x,
    y,
    priors: Mapping[str, tuple[float, float]] | None = None,
    n_steps: int = 20000,
    seed: int = 0,
    sigma: float | None = None,
    start: Mapping[str, float] | None = None,
    n_adapt: int = 3000,
    keep_chain: bool = True,
) -> FitResult:
    """Fit ``model`` to (x, y) by Metropolis sampling.

    Parameters
    ----------
    model : {"power_law", "exponential", "sigmoid"}
        ``power_law``: y = c x**alpha; ``exponential``: y = c 2**(x/doubling);
        ``sigmoid``: y = a + b / (1 + exp(-(x - d0)/tau)).
    priors : mapping name -> (mean, sd), optional
        Independent Gaussian priors. Missing entries fall back to broad
        zero-centred normals.
    sigma : float, optional
        Noise standard deviation of the Gaussian likelihood. Defaults to the
        RMS residual of the least-squares start, floored at 1e-6 of the
        data scale so that noiseless inputs remain well posed.
    n_adapt : int
        Length of the proposal-tuning pre-run. Those draws are discarded and
        the proposal is frozen before the production chain.

    Returns
    -------
    FitResult
        Posterior mean and standard deviation from the production chain after
        discarding the first 20% as burn-in.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {sorted(MODELS)}")
    spec = MODELS[model]
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    ok = ~(np.isnan(xa) | np.isnan(ya))
    xa, ya = xa[ok], ya[ok]
    k = len(spec.params)
    if xa.size < k:
        raise ValueError(f"{model} fit needs at least {k} points, got {xa.size}")

    p0 = np.array([start[n] for n in spec.params], float) if start else _initial_guess(model, xa, ya)
    pos_idx = [spec.params.index(n) for n in spec.positive]

    def resid(p):
        r = spec.func(p, xa) - ya
        return np.where(np.isfinite(r), r, 1e150)

    support = [(spec.params.index(n), lo, hi) for n, (lo, hi) in _support(model, xa).items()]

    def inside(p):
        return all(p[i] > 0 for i in pos_idx) and all(lo <= p[i] <= hi for i, lo, hi in support)

    for i, lo, hi in support:
        p0[i] = min(max(p0[i], lo), hi)
    try:
        ls = optimize.least_squares(resid, p0, method="lm", max_nfev=20000, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if np.all(np.isfinite(ls.x)) and inside(ls.x):
            p0 = ls.x
    except (ValueError, RuntimeError):
        pass

    yscale = float(np.std(ya)) or float(np.mean(np.abs(ya))) or 1.0
    if sigma is None:
        rms = float(np.sqrt(np.mean(resid(p0) ** 2)))
        sigma = max(rms, 1e-6 * yscale)
    if not sigma > 0:
        raise ValueError("sigma must be positive")

    prior_map = _default_priors(spec, p0, xa)
    if priors:
        prior_map.update(priors)
    prior_mu = np.array([prior_map[n][0] for n in spec.params], float)
    prior_sd = np.array([prior_map[n][1] for n in spec.params], float)

    def log_post(p):
        if not inside(p):
            return -math.inf
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r = spec.func(p, xa) - ya
        if not np.all(np.isfinite(r)):
            return -math.inf
        return -0.5 * float(r @ r) / sigma**2 - 0.5 * float((((p - prior_mu) / prior_sd) ** 2).sum())

    # Laplace approximation of the posterior gives the proposal shape
    eps = 1e-7 * np.maximum(np.abs(p0), 1e-3)
    jac = np.empty((xa.size, k))
    base = spec.func(p0, xa)
    for j in range(k):
        step = p0.copy()
        step[j] += eps[j]
        jac[:, j] = (spec.func(step, xa) - base) / eps[j]
    precision = jac.T @ jac / sigma**2 + np.diag(1.0 / prior_sd**2)
    cov = np.linalg.pinv(precision)
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    chol = v * np.sqrt(np.clip(w, 1e-300, None))

    rng = np.random.default_rng(seed)
    cur = p0.copy()
    cur_lp = log_post(cur)
    if not math.isfinite(cur_lp):
        raise ValueError("starting point has zero posterior density")

    def run(n, scale, record):
        nonlocal cur, cur_lp
        accepted = 0
        out = np.empty((n, k)) if record else None
        noise = rng.standard_normal((n, k))
        logu = np.log(rng.random(n))
        for i in range(n):
            prop = cur + scale * (chol @ noise[i])
            lp = log_post(prop)
            if logu[i] < lp - cur_lp:
                cur, cur_lp = prop, lp
                accepted += 1
            if record:
                out[i] = cur
        return accepted / n, out

    scale = 2.38 / math.sqrt(k)
    batch = 200
    for _ in range(max(1, n_adapt // batch)):
        rate, _ = run(batch, scale, False)
        if rate < TARGET_ACCEPTANCE[0]:
            scale *= 0.6 if rate < 0.05 else 0.85
        elif rate > TARGET_ACCEPTANCE[1]:
            scale *= 1.5 if rate > 0.8 else 1.15

    rate, chain = run(n_steps, scale, True)
    burn = int(BURN_IN_FRACTION * n_steps)
    kept = chain[burn:]
    mean = {n: float(v) for n, v in zip(spec.params, kept.mean(axis=0))}
    sd = {n: float(v) for n, v in zip(spec.params, kept.std(axis=0, ddof=1))}
    return FitResult(
        model=model,
        params=spec.params,
        mean=mean,
        sd=sd,
        acceptance_rate=rate,
        n_steps=n_steps,
        seed=seed,
        sigma=float(sigma),
        burn_in=burn,
        proposal_scale=scale,
        chain=chain if keep_chain else np.empty((0, k)),
        start={n: float(v) for n, v in zip(spec.params, p0)},
    )
