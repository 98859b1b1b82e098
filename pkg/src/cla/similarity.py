"""Banded DTW and the sampled expected distance between panel contexts."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


class BandWidenedWarning(UserWarning):
    """The requested band could not admit any warping path and was widened."""


@dataclass
class DtwConfig:
    band_width: int | None = None  # None -> ceil(K / 4), at least 1
    sample_count: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.band_width is not None and self.band_width < 1:
            raise ValueError("band_width must be >= 1")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    def band_for(self, n_features: int) -> int:
        if self.band_width is not None:
            return self.band_width
        return max(1, math.ceil(n_features / 4))


def _effective_band(n: int, m: int, band_width: int | None) -> int:
    if band_width is None:
        return max(n, m)
    if band_width < abs(n - m):
        warnings.warn(
            f"band {band_width} cannot align lengths {n} and {m}; widened to {abs(n - m)}",
            BandWidenedWarning,
            stacklevel=3,
        )
        return abs(n - m)
    return band_width


def dtw_batch(a, b, band_width: int | None = None) -> np.ndarray:
    """DTW distances between row pairs ``a[k]`` and ``b[k]``.

    Local cost is the absolute difference; steps are match, insertion and
    deletion; cells with ``|i - j| > band_width`` are excluded. ``None``
    means no band.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("DTW needs nonempty sequences")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    n, m = a.shape[1], b.shape[1]
    w = _effective_band(n, m, band_width)
    cost = np.abs(a[:, :, None] - b[:, None, :])
    acc = np.full((a.shape[0], n + 1, m + 1), np.inf)
    acc[:, 0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(max(1, i - w), min(m, i + w) + 1):
            prev = np.minimum(np.minimum(acc[:, i - 1, j], acc[:, i, j - 1]), acc[:, i - 1, j - 1])
            acc[:, i, j] = cost[:, i - 1, j - 1] + prev
    return acc[:, n, m]


def dtw_distance(a, b, band_width: int | None = None) -> float:
    """DTW distance between two univariate sequences."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("DTW needs nonempty sequences")
    return float(dtw_batch(a[None, :], b[None, :], band_width)[0])


def _check_context(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError(f"{name} must be a nonempty 2-D matrix, got shape {x.shape}")
    return x


def expected_distance(xm, xt, cfg: DtwConfig, rng=None, exhaustive: bool = False) -> float:
    """Mean DTW distance over randomly drawn row pairs of two contexts.

    Row indices for ``xm`` and ``xt`` are drawn independently and uniformly,
    ``cfg.sample_count`` times. Each row is a sequence over its feature
    columns. With ``exhaustive=True`` every row pair is used once instead.
    """
    xm = _check_context(xm, "Xm")
    xt = _check_context(xt, "Xt")
    band = cfg.band_for(max(xm.shape[1], xt.shape[1]))
    if exhaustive:
        r1 = np.repeat(np.arange(xm.shape[0]), xt.shape[0])
        r2 = np.tile(np.arange(xt.shape[0]), xm.shape[0])
    else:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        r1 = rng.integers(0, xm.shape[0], cfg.sample_count)
        r2 = rng.integers(0, xt.shape[0], cfg.sample_count)
    return float(np.mean(dtw_batch(xm[r1], xt[r2], band)))


def exhaustive_distance(xm, xt, band_width: int | None) -> float:
    """Exact mean DTW distance over all row pairs (small panels only)."""
    xm = _check_context(xm, "Xm")
    xt = _check_context(xt, "Xt")
    values = [dtw_distance(u, v, band_width) for u in xm for v in xt]
    return float(np.mean(values))
