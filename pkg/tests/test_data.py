import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cla.data import (
    EmptyPeriodError,
    PanelParseError,
    PanelSchemaError,
    RegimeSpec,
    apply_zscore,
    estimate_factor_loadings,
    generate_synthetic_regimes,
    load_panel,
    winsorize,
    write_panel,
    zscore_normalize,
)

HEADER = "period,security_id,feature_1,feature_2,forward_return\n"


def write(tmp_path, body, name="panel.csv", header=HEADER):
    p = tmp_path / name
    p.write_text(header + body, encoding="utf-8")
    return p


# ---- load_panel

def test_load_small_panel(tmp_path):
    body = "".join(
        f"{t},{s},{t + 0.5},{t - 0.5},{0.01 * t}\n" for t in (1, 2, 3) for s in ("A", "B")
    )
    ds = load_panel(write(tmp_path, body))
    assert ds.periods == [1, 2, 3]
    for w in ds.windows:
        assert w.features.shape == (2, 2)
        assert list(w.securities) == ["A", "B"]
    assert ds.windows[1].features[0].tolist() == [2.5, 1.5]


def test_row_order_does_not_matter(tmp_path):
    rows = [f"{t},{s},{t}.{i},{i}.5,0.1\n" for t in (3, 1, 2) for i, s in enumerate(("Z", "A", "M"))]
    shuffled = load_panel(write(tmp_path, "".join(rows), "a.csv"))
    ordered = load_panel(write(tmp_path, "".join(sorted(rows)), "b.csv"))
    assert shuffled.equals(ordered)
    assert list(shuffled.windows[0].securities) == ["A", "M", "Z"]


def test_non_numeric_feature_cites_line(tmp_path):
    body = "1,A,0.1,0.2,0.0\n1,B,abc,0.2,0.0\n"
    with pytest.raises(PanelParseError, match="line 3.*'abc'"):
        load_panel(write(tmp_path, body))


def test_missing_column_is_named(tmp_path):
    p = write(tmp_path, "1,A,0.1,0.2\n", header="period,security_id,feature_1,feature_2\n")
    with pytest.raises(PanelSchemaError, match="forward_return"):
        load_panel(p)


def test_period_without_securities(tmp_path):
    body = "1,A,0.1,0.2,0.0\n2,,,,\n"
    with pytest.raises(EmptyPeriodError, match="period 2"):
        load_panel(write(tmp_path, body))


def test_trailing_targets_may_be_empty(tmp_path):
    body = "1,A,0.1,0.2,0.05\n2,A,0.3,0.4,\n"
    ds = load_panel(write(tmp_path, body))
    assert ds.windows[0].targets[0] == 0.05
    assert math.isnan(ds.windows[1].targets[0])


def test_write_then_load_roundtrip(tmp_path):
    spec = RegimeSpec(2, 3, [0, 1], 5, 3, seed=4)
    ds, _ = generate_synthetic_regimes(spec)
    p = tmp_path / "rt.csv"
    write_panel(ds, p)
    assert load_panel(p).equals(ds)


# ---- winsorize

def test_winsorize_interpolated_percentiles():
    col = np.array([0.0, 5.0, 10.0, 1000.0])
    # positions 0.15 and 2.85 on the sorted column
    np.testing.assert_allclose(winsorize(col, 0.05, 0.95), [0.75, 5.0, 10.0, 851.5], rtol=0, atol=1e-12)


def test_winsorize_full_range_is_identity(rng):
    x = rng.standard_normal((30, 4)) ** 3
    assert np.array_equal(winsorize(x, 0.0, 1.0), x)


def test_winsorize_constant_column():
    x = np.array([[3.0], [3.0], [3.0]])
    assert np.array_equal(winsorize(x), x)


def test_winsorize_rejects_bad_input():
    with pytest.raises(ValueError):
        winsorize(np.empty((0, 3)))
    with pytest.raises(ValueError):
        winsorize(np.ones((3, 1)), 0.5, 0.5)


@settings(max_examples=80, deadline=None)
@given(st.data())
def test_winsorize_idempotent_on_order_statistics(data):
    n = data.draw(st.integers(2, 20))
    x = data.draw(arrays(np.float64, (n, 3), elements=st.floats(-1e6, 1e6, allow_nan=False)))
    i = data.draw(st.integers(0, n - 2))
    j = data.draw(st.integers(i + 1, n - 1))
    lo, hi = i / (n - 1), j / (n - 1)
    once = winsorize(x, lo, hi)
    np.testing.assert_allclose(winsorize(once, lo, hi), once, rtol=1e-9, atol=1e-6)


def test_winsorize_between_order_statistics_keeps_shrinking():
    # an interpolated cut moves once the tail it sits between is clamped
    once = winsorize(np.array([0.0, 1.0]), 0.0, 0.75)
    assert once.tolist() == [0.0, 0.75]
    assert winsorize(once, 0.0, 0.75).tolist() == [0.0, 0.5625]


# ---- z-score

def test_zscore_population_convention():
    z, mean, sd = zscore_normalize(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(z[:, 0], [-1.224744871, 0.0, 1.224744871], atol=1e-6)
    assert mean[0] == 2.0
    assert sd[0] == pytest.approx(math.sqrt(2.0 / 3.0))


def test_zscore_constant_column_maps_to_zero():
    z, _, sd = zscore_normalize(np.array([[7.0, 1.0], [7.0, 2.0]]))
    assert np.array_equal(z[:, 0], [0.0, 0.0])
    assert sd[0] == 0.0


def test_zscore_idempotent_on_normalized(rng):
    z, _, _ = zscore_normalize(rng.standard_normal((50, 3)))
    z2, _, _ = zscore_normalize(z)
    np.testing.assert_allclose(z2, z, atol=1e-9)


def test_zscore_stats_reusable(rng):
    x = rng.standard_normal((20, 3))
    z, m, s = zscore_normalize(x)
    assert np.array_equal(apply_zscore(x, m, s), z)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_zscore_moments(x):
    z, _, sd = zscore_normalize(x)
    live = sd > 1e-6 * (1 + np.abs(x).max())
    assert np.all(np.abs(z[:, live].mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z[:, live].std(axis=0) - 1) < 1e-9)


# ---- factor loadings

def _factors(rng, T):
    mkt = rng.standard_normal(T)
    val = rng.standard_normal(T)
    val -= mkt * (val @ mkt) / (mkt @ mkt)  # orthogonal to the market series
    return np.column_stack([mkt, val])


def test_exact_linear_relation_recovered(rng):
    f = _factors(rng, 40)
    r = (2.0 * f[:, 0])[None, :]
    fl = estimate_factor_loadings(r, f, window=40)
    np.testing.assert_allclose(fl.features[0], [2.0, 0.0], atol=1e-8)
    assert abs(fl.alphas[0, 0]) < 1e-8
    assert not fl.degenerate[0]


def test_noiseless_loadings_per_lag(rng):
    T, window = 60, 24
    f = _factors(rng, T)
    betas = rng.standard_normal((5, 2))
    r = betas @ f.T + 0.3
    fl = estimate_factor_loadings(r, f, window, lags=[0, 6, 12])
    assert fl.features.shape == (5, 6)
    for j in range(3):
        np.testing.assert_allclose(fl.features[:, 2 * j:2 * j + 2], betas, atol=1e-8)
    np.testing.assert_allclose(fl.alphas, 0.3, atol=1e-8)


def test_pure_noise_loadings_within_three_se():
    rng = np.random.default_rng(7)
    T = 500
    f = _factors(rng, T)
    r = rng.standard_normal((20, T))
    fl = estimate_factor_loadings(r, f, window=T)
    design = np.column_stack([np.ones(T), f])
    cov = np.linalg.inv(design.T @ design)
    for i in range(20):
        resid = r[i] - design @ np.linalg.lstsq(design, r[i], rcond=None)[0]
        s2 = resid @ resid / (T - 3)
        se = np.sqrt(s2 * np.diag(cov)[1:])
        assert np.all(np.abs(fl.features[i]) < 3 * se)


def test_constant_market_is_degenerate(rng):
    f = np.column_stack([np.full(30, 0.02), rng.standard_normal(30)])
    r = rng.standard_normal((3, 30))
    fl = estimate_factor_loadings(r, f, window=30)
    assert fl.degenerate.all()
    assert not fl.features.any()


def test_missing_returns_flag_only_that_security(rng):
    f = _factors(rng, 30)
    r = rng.standard_normal((3, 30))
    r[1, 4] = np.nan
    fl = estimate_factor_loadings(r, f, window=30)
    assert fl.degenerate.tolist() == [False, True, False]
    assert not fl.features[1].any()


def test_short_window_rejected(rng):
    with pytest.raises(ValueError, match="window"):
        estimate_factor_loadings(rng.standard_normal((2, 10)), _factors(rng, 10), window=4)


# ---- synthetic regimes

def test_noiseless_identity_map():
    spec = RegimeSpec(1, 5, [0], 10, 2, seed=3, noise_sd=0.0, maps=[[1.0, 0.0]])
    ds, boundaries = generate_synthetic_regimes(spec)
    assert boundaries == []
    for w in ds.windows:
        assert np.array_equal(w.targets, w.features[:, 0])


def test_generation_is_reproducible():
    spec = RegimeSpec(3, 4, [0, 1, 2, 0], 12, 5, seed=11, feature_shift=1.0)
    a, ba = generate_synthetic_regimes(spec)
    b, bb = generate_synthetic_regimes(spec)
    assert a.equals(b) and ba == bb


def test_segment_ols_recovers_maps():
    spec = RegimeSpec(2, 10, [0, 1, 0], 100, 4, seed=5, noise_sd=0.1, feature_shift=1.0)
    ds, boundaries = generate_synthetic_regimes(spec)
    assert boundaries == [10, 20]
    maps, _ = spec.resolved()
    labels = spec.labels()
    for seg in range(3):
        idx = range(seg * 10, seg * 10 + 10)
        x = np.vstack([ds[t].features for t in idx])
        y = np.concatenate([ds[t].targets for t in idx])
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        # 1000 rows, noise 0.1: coefficient se is about 0.003
        np.testing.assert_allclose(coef, maps[labels[idx[0]]], atol=0.02)


def test_regime_spec_validation():
    with pytest.raises(ValueError, match="out of range"):
        RegimeSpec(2, 5, [0, 2], 10, 3, seed=0)
    with pytest.raises(ValueError):
        RegimeSpec(2, 0, [0, 1], 10, 3, seed=0)
    with pytest.raises(ValueError, match="maps"):
        RegimeSpec(2, 5, [0, 1], 10, 3, seed=0, maps=[[1.0, 0.0, 0.0]])
