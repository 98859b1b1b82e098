"""Panel data: CSV ingestion, cross-sectional preprocessing, factor loadings
and a synthetic regime-switching generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class PanelError(ValueError):
    """Base class for panel ingestion problems."""


class PanelSchemaError(PanelError):
    pass


class PanelParseError(PanelError):
    pass


class EmptyPeriodError(PanelError):
    pass


@dataclass
class PanelWindow:
    """One period of the panel: securities x lagged features, plus targets.

    ``targets`` holds the forward return recorded for the period (NaN when not
    yet realized). ``returns`` optionally holds the one-period realized return
    of each security, used for holding-span accounting.
    """

    period: object
    securities: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    returns: np.ndarray | None = None

    def __post_init__(self):
        self.securities = np.asarray(self.securities, dtype=str)
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2:
            raise PanelError(f"period {self.period}: features must be 2-D")
        n = len(self.securities)
        if n == 0:
            raise EmptyPeriodError(f"period {self.period} has no securities")
        if self.features.shape[0] != n or self.targets.shape != (n,):
            raise PanelError(
                f"period {self.period}: {n} securities but features "
                f"{self.features.shape} / targets {self.targets.shape}"
            )
        if self.returns is not None:
            self.returns = np.asarray(self.returns, dtype=float)
            if self.returns.shape != (n,):
                raise PanelError(f"period {self.period}: returns shape mismatch")

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass
class Dataset:
    windows: list[PanelWindow]

    def __post_init__(self):
        if not self.windows:
            raise PanelError("dataset has no periods")
        k = {w.n_features for w in self.windows}
        if len(k) != 1:
            raise PanelError(f"inconsistent feature counts across periods: {sorted(k)}")

    def __len__(self):
        return len(self.windows)

    def __getitem__(self, t) -> PanelWindow:
        return self.windows[t]

    @property
    def periods(self) -> list:
        return [w.period for w in self.windows]

    @property
    def securities(self) -> list[np.ndarray]:
        return [w.securities for w in self.windows]

    @property
    def features(self) -> list[np.ndarray]:
        return [w.features for w in self.windows]

    @property
    def targets(self) -> list[np.ndarray]:
        return [w.targets for w in self.windows]

    @property
    def n_features(self) -> int:
        return self.windows[0].n_features

    def equals(self, other: "Dataset") -> bool:
        if len(self) != len(other):
            return False
        for a, b in zip(self.windows, other.windows):
            if a.period != b.period or not np.array_equal(a.securities, b.securities):
                return False
            if not np.array_equal(a.features, b.features):
                return False
            if not np.array_equal(a.targets, b.targets, equal_nan=True):
                return False
            if (a.returns is None) != (b.returns is None):
                return False
            if a.returns is not None and not np.array_equal(a.returns, b.returns, equal_nan=True):
                return False
        return True


# ---------------------------------------------------------------- CSV ingestion

DEFAULT_SCHEMA = {
    "period": "period",
    "security_id": "security_id",
    "feature_prefix": "feature_",
    "forward_return": "forward_return",
    "period_return": "period_return",
}


def _period_key(label: str):
    try:
        return (0, int(label), label)
    except ValueError:
        return (1, 0, label)


def _feature_columns(header: list[str], schema: dict) -> list[str]:
    if schema.get("features"):
        cols = list(schema["features"])
        for c in cols:
            if c not in header:
                raise PanelSchemaError(f"missing column {c!r}")
        return cols
    prefix = schema["feature_prefix"]
    cols = [c for c in header if c.startswith(prefix)]
    if not cols:
        raise PanelSchemaError(f"missing column {prefix + '1'!r} (no feature columns)")

    def order(c):
        suffix = c[len(prefix):]
        return (0, int(suffix), c) if suffix.isdigit() else (1, 0, c)

    return sorted(cols, key=order)


def load_panel(path, schema: dict | None = None) -> Dataset:
    """Read a long-format CSV panel into a :class:`Dataset`.

    One row per (period, security). Feature columns are matched by name prefix
    unless ``schema["features"]`` lists them. Empty ``forward_return`` cells
    become NaN (the trailing horizon is not yet realized). Securities are
    sorted by identifier within each period so row order in the file does not
    matter.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise PanelSchemaError(f"{path}: missing header row")
        for key in ("period", "security_id", "forward_return"):
            if schema[key] not in header:
                raise PanelSchemaError(f"missing column {schema[key]!r}")
        fcols = _feature_columns(header, schema)
        rcol = schema.get("period_return")
        has_returns = bool(rcol) and rcol in header

        grouped: dict[str, list] = {}
        for line, row in enumerate(reader, start=2):
            period = (row[schema["period"]] or "").strip()
            if not period:
                raise PanelParseError(f"line {line}: empty period")
            bucket = grouped.setdefault(period, [])
            sec = (row[schema["security_id"]] or "").strip()
            if not sec:
                continue
            try:
                feats = [float(row[c]) for c in fcols]
            except (TypeError, ValueError):
                bad = next(c for c in fcols if not _is_float(row[c]))
                raise PanelParseError(
                    f"line {line}: non-numeric value {row[bad]!r} in column {bad!r}"
                ) from None
            target = _optional_float(row[schema["forward_return"]], line, schema["forward_return"])
            ret = _optional_float(row[rcol], line, rcol) if has_returns else math.nan
            bucket.append((sec, feats, target, ret))

    windows = []
    for period in sorted(grouped, key=_period_key):
        rows = sorted(grouped[period], key=lambda r: r[0])
        if not rows:
            raise EmptyPeriodError(f"period {period} has no securities")
        label = int(period) if _period_key(period)[0] == 0 else period
        windows.append(
            PanelWindow(
                period=label,
                securities=np.array([r[0] for r in rows]),
                features=np.array([r[1] for r in rows], dtype=float),
                targets=np.array([r[2] for r in rows], dtype=float),
                returns=np.array([r[3] for r in rows], dtype=float) if has_returns else None,
            )
        )
    return Dataset(windows)


def _is_float(s) -> bool:
    try:
        float(s)
        return True
    except (TypeError, ValueError):
        return False


def _optional_float(s, line, col) -> float:
    if s is None or s.strip() == "":
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise PanelParseError(f"line {line}: non-numeric value {s!r} in column {col!r}") from None


def write_panel(dataset: Dataset, path) -> None:
    """Write ``dataset`` in the format :func:`load_panel` reads."""
    k = dataset.n_features
    has_returns = any(w.returns is not None for w in dataset.windows)
    header = ["period", "security_id"] + [f"feature_{i + 1}" for i in range(k)] + ["forward_return"]
    if has_returns:
        header.append("period_return")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for w in dataset.windows:
            for i, sec in enumerate(w.securities):
                row = [w.period, sec] + [repr(float(v)) for v in w.features[i]]
                row.append("" if math.isnan(w.targets[i]) else repr(float(w.targets[i])))
                if has_returns:
                    r = math.nan if w.returns is None else w.returns[i]
                    row.append("" if math.isnan(r) else repr(float(r)))
                out.writerow(row)


# ---------------------------------------------------------------- preprocessing

def winsorize(matrix, lower_pct: float = 0.01, upper_pct: float = 0.99) -> np.ndarray:
    """Clamp each column to its [lower_pct, upper_pct] percentiles.

    Percentiles use linear interpolation between order statistics.
    """
    x = np.asarray(matrix, dtype=float)
    if x.size == 0:
        raise ValueError("cannot winsorize an empty matrix")
    if not 0.0 <= lower_pct < upper_pct <= 1.0:
        raise ValueError(f"need 0 <= lower < upper <= 1, got ({lower_pct}, {upper_pct})")
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    lo = np.quantile(x, lower_pct, axis=0, method="linear")
    hi = np.quantile(x, upper_pct, axis=0, method="linear")
    out = np.clip(x, lo, hi)
    return out[:, 0] if squeeze else out


def zscore_normalize(matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column z-score with population sd. Returns (normalized, mean, sd).

    A zero-variance column maps to zeros; its returned sd is 0.
    """
    x = np.asarray(matrix, dtype=float)
    if x.size == 0:
        raise ValueError("cannot normalize an empty matrix")
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    return apply_zscore(x, mean, sd), mean, sd


def apply_zscore(matrix, mean, sd) -> np.ndarray:
    """Normalize ``matrix`` with previously computed column statistics."""
    x = np.asarray(matrix, dtype=float)
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (x - mean) / safe, 0.0)


# ---------------------------------------------------------------- factor loadings

@dataclass
class FactorLoadings:
    features: np.ndarray  # securities x (2 * len(lags)): [b_mkt@lag0, b_val@lag0, b_mkt@lag1, ...]
    degenerate: np.ndarray  # bool per security
    alphas: np.ndarray  # securities x len(lags)


def estimate_factor_loadings(excess_returns, factor_series, window: int, lags: Sequence[int] = (0,)) -> FactorLoadings:
    """OLS loadings of each security on market and value factor returns.

    ``excess_returns`` is securities x periods, ``factor_series`` periods x 2
    (market excess, value relative). For lag ``L`` the regression uses the
    ``window`` periods ending ``L`` periods before the last one. Securities
    whose design is rank-deficient, or with missing returns in the window, are
    flagged degenerate and get a zero row.
    """
    r = np.atleast_2d(np.asarray(excess_returns, dtype=float))
    f = np.asarray(factor_series, dtype=float)
    if f.ndim != 2 or f.shape[1] != 2:
        raise ValueError("factor_series must be periods x 2 (market, value)")
    if r.shape[1] != f.shape[0]:
        raise ValueError(f"returns cover {r.shape[1]} periods, factors {f.shape[0]}")
    n_reg = 3
    if window < n_reg + 2:
        raise ValueError(f"window must be >= {n_reg + 2}, got {window}")
    T = f.shape[0]
    lags = list(lags)
    if max(lags) + window > T:
        raise ValueError(f"lag {max(lags)} with window {window} exceeds {T} periods")

    n = r.shape[0]
    out = np.zeros((n, 2 * len(lags)))
    alphas = np.zeros((n, len(lags)))
    degenerate = np.zeros(n, dtype=bool)
    for j, lag in enumerate(lags):
        end = T - lag
        sl = slice(end - window, end)
        design = np.column_stack([np.ones(window), f[sl]])
        if np.linalg.matrix_rank(design) < n_reg:
            degenerate[:] = True
            continue
        y = r[:, sl]
        ok = np.isfinite(y).all(axis=1)
        degenerate |= ~ok
        if ok.any():
            coef, *_ = np.linalg.lstsq(design, y[ok].T, rcond=None)
            out[ok, 2 * j:2 * j + 2] = coef[1:].T
            alphas[ok, j] = coef[0]
    out[degenerate] = 0.0
    alphas[degenerate] = 0.0
    return FactorLoadings(out, degenerate, alphas)


# ---------------------------------------------------------------- synthetic regimes

@dataclass
class RegimeSpec:
    """Parameters of a piecewise-linear synthetic panel.

    ``maps`` holds one coefficient vector per regime and ``feature_means``
    one mean vector per regime; either may be omitted and is then drawn from
    ``seed`` (unit-norm maps, means scaled by ``feature_shift``).
    """

    n_regimes: int
    regime_length: int
    regime_sequence: list[int]
    n_securities: int
    n_features: int
    seed: int
    noise_sd: float = 0.1
    maps: list[list[float]] | None = None
    feature_shift: float = 0.0
    feature_means: list[list[float]] | None = None

    def __post_init__(self):
        if min(self.n_regimes, self.regime_length, self.n_securities, self.n_features) <= 0:
            raise ValueError("counts and lengths must be positive")
        if not self.regime_sequence:
            raise ValueError("regime_sequence is empty")
        bad = [r for r in self.regime_sequence if not 0 <= r < self.n_regimes]
        if bad:
            raise ValueError(f"regime_sequence entries {bad} out of range [0, {self.n_regimes})")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        for name in ("maps", "feature_means"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val, dtype=float)
                if arr.shape != (self.n_regimes, self.n_features):
                    raise ValueError(f"{name} must be {self.n_regimes} x {self.n_features}, got {arr.shape}")

    @property
    def n_periods(self) -> int:
        return self.regime_length * len(self.regime_sequence)

    def labels(self) -> np.ndarray:
        """Regime index of every period."""
        return np.repeat(np.asarray(self.regime_sequence), self.regime_length)

    def boundaries(self) -> list[int]:
        """Period indices where the regime differs from the previous period."""
        lab = self.labels()
        return [int(t) for t in np.flatnonzero(lab[1:] != lab[:-1]) + 1]

    def resolved(self) -> tuple[np.ndarray, np.ndarray]:
        """(maps, feature_means) with defaults drawn from the seed."""
        param_rng = np.random.default_rng([self.seed, 1])
        if self.maps is None:
            maps = param_rng.standard_normal((self.n_regimes, self.n_features))
            maps /= np.linalg.norm(maps, axis=1, keepdims=True)
        else:
            maps = np.asarray(self.maps, dtype=float)
        if self.feature_means is None:
            means = self.feature_shift * param_rng.standard_normal((self.n_regimes, self.n_features))
        else:
            means = np.asarray(self.feature_means, dtype=float)
        return maps, means


def generate_synthetic_regimes(spec: RegimeSpec) -> tuple[Dataset, list[int]]:
    """Draw a panel whose target map switches by regime.

    Per period, features are i.i.d. normal around the active regime's mean
    vector (unit variance) and ``target = map . features + noise``.
    Returns the dataset and the list of regime boundary indices.
    """
    maps, means = spec.resolved()
    rng = np.random.default_rng([spec.seed, 0])
    securities = np.array([f"S{i:04d}" for i in range(spec.n_securities)])
    windows = []
    for t, r in enumerate(spec.labels()):
        x = means[r] + rng.standard_normal((spec.n_securities, spec.n_features))
        y = x @ maps[r] + spec.noise_sd * rng.standard_normal(spec.n_securities)
        windows.append(PanelWindow(t, securities.copy(), x, y))
    return Dataset(windows), spec.boundaries()
