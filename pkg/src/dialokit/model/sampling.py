"""Nucleus (top-p) truncation and sampling over token distributions."""
from __future__ import annotations

import numpy as np


def _validate(dist: np.ndarray, p: float) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 1 or dist.size == 0:
        raise ValueError("distribution must be a non-empty 1-d vector")
    if np.any(dist < 0) or not np.all(np.isfinite(dist)):
        raise ValueError("distribution entries must be finite and non-negative")
    if abs(float(dist.sum()) - 1.0) > 1e-9:
        raise ValueError("distribution must sum to 1 within 1e-9")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    return dist


def nucleus(dist: np.ndarray, p: float) -> np.ndarray:
    """Smallest prefix of tokens, sorted by descending probability (ties by
    ascending id), whose cumulative mass reaches p. Returns ascending ids.

    p = 1.0 returns every token with nonzero mass.
    """
    dist = _validate(dist, p)
    if p >= 1.0:
        return np.flatnonzero(dist > 0.0)
    order = np.lexsort((np.arange(dist.size), -dist))
    csum = np.cumsum(dist[order])
    k = int(np.searchsorted(csum, p, side="left"))
    if k >= dist.size:  # distribution tolerance left total mass just under p
        return np.flatnonzero(dist > 0.0)
    return np.sort(order[: k + 1])


def sample_from(dist: np.ndarray, p: float, rng: np.random.Generator) -> int:
    """Draw one token id from the renormalized nucleus."""
    ids = nucleus(dist, p)
    mass = np.asarray(dist, dtype=np.float64)[ids]
    return int(rng.choice(ids, p=mass / mass.sum()))
