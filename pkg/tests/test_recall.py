import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cla.recall import (
    balance,
    best_index,
    equal_weights,
    g_best,
    g_equal,
    g_simweight,
    mixture_weights,
)

dists = arrays(np.float64, st.integers(1, 12), elements=st.floats(0, 1e3, allow_nan=False))


def test_two_column_weights():
    np.testing.assert_allclose(mixture_weights([1.0, 3.0]), [0.75, 0.25], atol=1e-15)


def test_equal_distances_uniform():
    assert mixture_weights([1.0, 1.0, 1.0, 1.0]).tolist() == [0.25] * 4
    assert mixture_weights([0.0, 0.0, 0.0]).tolist() == [1 / 3] * 3


def test_single_column_weight_one():
    assert mixture_weights([5.0]).tolist() == [1.0]


def test_three_column_weights_renormalized():
    # raw 1 - d/6 = [5/6, 4/6, 3/6] sums to 2
    np.testing.assert_allclose(mixture_weights([1.0, 2.0, 3.0]), [5 / 12, 4 / 12, 3 / 12], atol=1e-15)


def test_invalid_distances():
    with pytest.raises(ValueError):
        mixture_weights([])
    with pytest.raises(ValueError):
        mixture_weights([1.0, -0.1])
    with pytest.raises(ValueError):
        mixture_weights([np.inf, 1.0])


def test_g_best_choices():
    a, b = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    assert g_best([a, b], [0.2, 0.1]).tolist() == b.tolist()
    assert g_best([a], [0.7]).tolist() == a.tolist()
    # tie goes to the newer column
    assert g_best([a, b], [0.1, 0.1]).tolist() == b.tolist()
    assert best_index([0.1, 0.3, 0.1, 0.2]) == 2


def test_g_simweight_hand_blend():
    f = np.array([[0.2, 0.2, 0.2], [0.6, 0.6, 0.6]])
    np.testing.assert_allclose(g_simweight(f, [1.0, 3.0]), [0.3, 0.3, 0.3], atol=1e-15)


def test_g_simweight_identical_forecasts():
    f = np.tile([0.1, -0.4, 0.9], (4, 1))
    np.testing.assert_allclose(g_simweight(f, [0.1, 2.0, 0.5, 7.0]), f[0], atol=1e-15)


def test_g_simweight_single_column():
    assert g_simweight([[0.3, 0.4]], [2.0]).tolist() == [0.3, 0.4]


def test_g_simweight_length_mismatch():
    with pytest.raises(ValueError):
        g_simweight(np.ones((2, 3)), [1.0, 2.0, 3.0])


def test_g_equal():
    np.testing.assert_allclose(g_equal([[0.2], [0.6]]), [0.4], atol=1e-15)
    assert g_equal([[0.3, 0.1]]).tolist() == [0.3, 0.1]
    with pytest.raises(ValueError):
        g_equal(np.empty((0, 3)))
    with pytest.raises(ValueError):
        equal_weights(0)


@settings(max_examples=200, deadline=None)
@given(dists)
def test_weights_convex(d):
    w = mixture_weights(d)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.all((w >= 0) & (w <= 1))


@settings(max_examples=200, deadline=None)
@given(dists, st.data())
def test_weight_nonincreasing_in_own_distance(d, data):
    i = data.draw(st.integers(0, d.size - 1))
    bump = data.draw(st.floats(0, 1e3))
    d2 = d.copy()
    d2[i] += bump
    assert mixture_weights(d2)[i] <= mixture_weights(d)[i] + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=12), st.integers(0, 1000))
def test_g_best_invariant_to_increasing_transform(ints, seed):
    # integer-valued distances keep every transform strictly increasing in floating point
    d = np.array(ints, dtype=float)
    f = np.random.default_rng(seed).standard_normal((d.size, 5))
    for transform in (np.sqrt, lambda v: 3 * v + 1, np.log1p):
        assert np.array_equal(g_best(f, d), g_best(f, transform(d)))


@settings(max_examples=200, deadline=None)
@given(dists, st.integers(0, 1000))
def test_g_simweight_in_convex_hull(d, seed):
    f = np.random.default_rng(seed).standard_normal((d.size, 6))
    out = g_simweight(f, d)
    assert np.all(out >= f.min(axis=0) - 1e-12)
    assert np.all(out <= f.max(axis=0) + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.floats(0, 1e3), st.integers(0, 1000))
def test_simweight_equals_equal_under_equal_distances(m, v, seed):
    f = np.random.default_rng(seed).standard_normal((m, 7))
    assert np.array_equal(g_simweight(f, np.full(m, v)), g_equal(f))


def test_balance_modes():
    f = np.array([[1.0, 1.0], [3.0, 5.0], [5.0, 9.0]])
    d = [2.0, 1.0, 3.0]
    out, w = balance("best", f, d)
    assert out.tolist() == [3.0, 5.0] and w.tolist() == [0.0, 1.0, 0.0]
    out, w = balance("equal", f, d)
    assert out.tolist() == [3.0, 5.0] and np.allclose(w, 1 / 3)
    out, w = balance("simweight", f, d)
    np.testing.assert_allclose(out, w @ f)
    out, w = balance("base", f, d)
    assert out.tolist() == [5.0, 9.0] and w.tolist() == [0.0, 0.0, 1.0]
    with pytest.raises(ValueError, match="mode"):
        balance("median", f, d)
