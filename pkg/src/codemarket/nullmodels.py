"""Randomized comparison cohorts for linked pairs.

RT
    Uniform random non-linked pairs; each gets a connection day drawn from
    the empirical connection days.
RTA
    For each linked pair, two assets whose market ages on the pair's
    connection day match the original members' ages.
ORTA
    For each linked pair, keep one member (fair coin) and replace the other
    by an age-matched asset.

Age matching starts at a +/-7 day tolerance and widens by 7 days up to 35;
pairs still unmatched are skipped and reported.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

AGE_TOLERANCE = 7
TOLERANCE_STEP = 7
MAX_TOLERANCE = 35
_MAX_TRIES = 200


class InfeasibleCohortError(ValueError):
    pass


@dataclass(frozen=True)
class NullPair:
    asset_i: str
    asset_j: str
    day: np.datetime64
    model: str
    retained: str | None = None
    tolerance: int | None = None
    source_pair: tuple[str, str] | None = None

    @property
    def pair(self) -> tuple[str, str]:
        return (self.asset_i, self.asset_j) if self.asset_i <= self.asset_j else (self.asset_j, self.asset_i)


@dataclass
class Cohort:
    model: str
    pairs: list[NullPair]
    skipped: list[tuple[str, str]] = field(default_factory=list)
    seed: int = 0

    def __len__(self) -> int:
        return len(self.pairs)


def _key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def sample_rt(
    eligible: Sequence[str],
    linked: Iterable[tuple[str, str]],
    connection_days: Sequence,
    n: int,
    seed: int,
) -> Cohort:
    """``n`` uniform draws (with replacement) from the non-linked pairs."""
    assets = sorted(set(eligible))
    linked_set = {_key(*p) for p in linked}
    total = len(assets) * (len(assets) - 1) // 2
    n_linked = sum(1 for a, b in linked_set if a in assets and b in assets)
    if len(assets) < 2 or n_linked >= total:
        raise InfeasibleCohortError("no non-linked pair of eligible assets exists")
    days = np.array([np.datetime64(d, "D") for d in connection_days], dtype="datetime64[D]")
    if days.size == 0:
        raise InfeasibleCohortError("empty connection-day multiset")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(101,)))
    out = []
    while len(out) < n:
        i, j = rng.choice(len(assets), size=2, replace=False)
        key = _key(assets[i], assets[j])
        if key in linked_set:
            continue
        out.append(NullPair(key[0], key[1], days[rng.integers(days.size)], "rt"))
    return Cohort("rt", out, [], seed)


def market_ages(panel, day) -> dict[str, int | None]:
    """Signed days since each asset's first price observation."""
    day = np.datetime64(day, "D")
    return {a: (int((day - f).astype(int)) if f is not None else None) for a, f in panel.first_observation("price").items()}


def _age_candidates(ages: dict[str, int | None], target: int, tol: int, banned=()) -> list[str]:
    return sorted(a for a, v in ages.items() if v is not None and abs(v - target) <= tol and a not in banned)


def _draw_matched(rng, ages, targets, fixed, linked_set, exclude_pair):
    """Draw assets matching ``targets`` ages; ``fixed`` may pin one member.

    Replacements never reuse a member of the original pair.
    """
    for tol in range(AGE_TOLERANCE, MAX_TOLERANCE + 1, TOLERANCE_STEP):
        pools = [None if fixed[k] is not None else _age_candidates(ages, targets[k], tol, exclude_pair)
                 for k in (0, 1)]
        if any(p is not None and not p for p in pools):
            continue
        for _ in range(_MAX_TRIES):
            picks = [fixed[k] if fixed[k] is not None else pools[k][rng.integers(len(pools[k]))] for k in (0, 1)]
            if picks[0] == picks[1]:
                continue
            key = _key(*picks)
            if key in linked_set or key == exclude_pair:
                continue
            return picks, tol
    return None, None


def _matched_cohort(model, linked_pairs, panel, seed, keep_one):
    linked_list = list(linked_pairs)
    linked_set = {_key(*c.pair) for c in linked_list}
    out, skipped = [], []
    for k, c in enumerate(linked_list):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(202 if keep_one else 201, k)))
        a, b = c.pair
        ages = market_ages(panel, c.day)
        if ages.get(a) is None or ages.get(b) is None:
            skipped.append(c.pair)
            continue
        targets = (ages[a], ages[b])
        fixed = [None, None]
        retained = None
        if keep_one:
            slot = int(rng.integers(2))
            retained = c.pair[slot]
            fixed[slot] = retained
        picks, tol = _draw_matched(rng, ages, targets, fixed, linked_set, _key(a, b))
        if picks is None:
            skipped.append(c.pair)
            continue
        out.append(NullPair(picks[0], picks[1], np.datetime64(c.day, "D"), model, retained, tol, _key(a, b)))
    return Cohort(model, out, skipped, seed)


def sample_rta(linked_pairs: Sequence, panel, seed: int) -> Cohort:
    """Age-matched random pairs, one per linked pair, on the original connection day."""
    return _matched_cohort("rta", linked_pairs, panel, seed, keep_one=False)


def sample_orta(linked_pairs: Sequence, panel, seed: int) -> Cohort:
    """Keep one original member; replace the other by an age-matched asset."""
    return _matched_cohort("orta", linked_pairs, panel, seed, keep_one=True)


COHORT_COLUMNS = ("asset_i", "asset_j", "pseudo_connection_day", "model", "retained")


def write_cohort(cohort: Cohort, target) -> None:
    with open(target, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COHORT_COLUMNS)
        for p in cohort.pairs:
            w.writerow([p.asset_i, p.asset_j, str(p.day), p.model, p.retained or ""])


def read_cohort(source) -> Cohort:
    with open(source, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    pairs = [NullPair(r["asset_i"], r["asset_j"], np.datetime64(r["pseudo_connection_day"], "D"), r["model"],
                      r.get("retained") or None) for r in rows]
    return Cohort(pairs[0].model if pairs else "rt", pairs)
