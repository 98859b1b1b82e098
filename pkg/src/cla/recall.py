"""Balancing column forecasts by contextual distance.

Columns are ordered oldest first; the live base column, when present, is the
last (most recent) one.
"""

from __future__ import annotations

import numpy as np

MODES = ("best", "simweight", "equal", "base")


def _distances(distances) -> np.ndarray:
    d = np.asarray(distances, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("need at least one column")
    if (d < 0).any() or not np.isfinite(d).all():
        raise ValueError("distances must be finite and nonnegative")
    return d


def _forecasts(forecasts, n_cols) -> np.ndarray:
    f = np.asarray(forecasts, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("need at least one column of forecasts")
    if n_cols is not None and f.shape[0] != n_cols:
        raise ValueError(f"{f.shape[0]} forecast columns but {n_cols} distances")
    return f


def mixture_weights(distances) -> np.ndarray:
    """Similarity weights ``1 - D_m / sum(D)``, rescaled to sum to one.

    The raw weights sum to M - 1, so they are divided by that sum. A single
    column gets weight 1; all-equal distances (including all zero) give
    uniform weights.
    """
    d = _distances(distances)
    m = d.size
    if m == 1:
        return np.ones(1)
    if np.all(d == d[0]):
        return np.full(m, 1.0 / m)
    raw = 1.0 - d / d.sum()
    return raw / raw.sum()


def best_index(distances) -> int:
    """Index of the smallest distance; ties go to the most recent column."""
    d = _distances(distances)
    return int(d.size - 1 - np.argmin(d[::-1]))


def best_weights(distances) -> np.ndarray:
    d = _distances(distances)
    w = np.zeros(d.size)
    w[best_index(d)] = 1.0
    return w


def equal_weights(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one column")
    return np.full(n, 1.0 / n)


def g_best(forecasts, distances) -> np.ndarray:
    """Forecast of the closest column."""
    d = _distances(distances)
    f = _forecasts(forecasts, d.size)
    return f[best_index(d)].copy()


def g_equal(forecasts) -> np.ndarray:
    """Unweighted mean across columns."""
    f = _forecasts(forecasts, None)
    return f.mean(axis=0)


def g_simweight(forecasts, distances) -> np.ndarray:
    """Per-security convex blend of column forecasts under :func:`mixture_weights`."""
    d = _distances(distances)
    f = _forecasts(forecasts, d.size)
    if d.size == 1:
        return f[0].copy()
    if np.all(d == d[0]):
        return g_equal(f)
    return mixture_weights(d) @ f


def balance(mode: str, forecasts, distances) -> tuple[np.ndarray, np.ndarray]:
    """Blend forecasts under ``mode``; returns (blended forecast, column weights).

    In ``base`` mode only the last column (the live base model) contributes.
    """
    d = _distances(distances)
    f = _forecasts(forecasts, d.size)
    if mode == "best":
        w = best_weights(d)
        return f[best_index(d)].copy(), w
    if mode == "simweight":
        return g_simweight(f, d), mixture_weights(d)
    if mode == "equal":
        return g_equal(f), equal_weights(d.size)
    if mode == "base":
        w = np.zeros(d.size)
        w[-1] = 1.0
        return f[-1].copy(), w
    raise ValueError(f"unknown balancing mode {mode!r}; expected one of {MODES}")
