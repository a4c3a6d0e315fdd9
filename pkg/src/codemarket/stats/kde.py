from __future__ import annotations

import math

import numpy as np

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gaussian_kde(samples, bandwidth: float, grid, chunk: int = 4096) -> np.ndarray:
    """Fixed-bandwidth Gaussian kernel density estimate evaluated on ``grid``.

    ``bandwidth`` is the kernel standard deviation in data units (not a
    Scott/Silverman factor). NaN samples are ignored.
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(samples, dtype=float).ravel()
    x = x[~np.isnan(x)]
    g = np.asarray(grid, dtype=float)
    if x.size == 0:
        raise ValueError("gaussian_kde needs at least one finite sample")
    flat = g.ravel()
    out = np.empty(flat.size)
    for lo in range(0, flat.size, chunk):
        u = (flat[lo:lo + chunk, None] - x[None, :]) / bandwidth
        out[lo:lo + chunk] = np.exp(-0.5 * u * u).sum(axis=1)
    out *= _INV_SQRT_2PI / (x.size * bandwidth)
    return out.reshape(g.shape)
