import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from baskettrial.divergence import distance_matrix
from baskettrial.kernel import (CorrelationFn, CorrelationKind, build_corr_matrix, correlation,
                                preprocess_ties, preprocess_ties_batch)

EXP, SQ = CorrelationKind.EXPONENTIAL, CorrelationKind.SQUARED_EXPONENTIAL


def test_correlation_values():
    assert correlation(CorrelationFn(EXP, 1.0), 0.0) == 1.0
    assert correlation(CorrelationFn(EXP, 1.0), 0.995) == pytest.approx(0.36972, abs=1e-5)
    assert correlation(CorrelationFn(SQ, 1.0), 0.032) == pytest.approx(0.998977, abs=1e-6)
    with pytest.raises(ValueError):
        CorrelationFn(EXP, 0.0)
    with pytest.raises(ValueError):
        correlation(CorrelationFn(EXP, 1.0), -0.1)


def test_corr_matrix_two_indications():
    R = build_corr_matrix(np.array([[0, 0.995], [0.995, 0]]), CorrelationFn("exp", 1.0))
    assert R == pytest.approx(np.array([[1, np.exp(-0.995)], [np.exp(-0.995), 1]]))


def test_corr_matrix_limits():
    D = distance_matrix("b", [24] * 4, [0, 6, 12, 24])
    far = build_corr_matrix(D, CorrelationFn("exp", 30.0 / D[D > 0].min() + 1e3))
    assert np.abs(far - np.eye(4)).max() <= 1e-12
    ones = build_corr_matrix(np.zeros((3, 3)), CorrelationFn("sqexp", 2.0))
    assert np.array_equal(ones, np.ones((3, 3)))
    with pytest.raises(ValueError):
        build_corr_matrix(np.zeros((2, 3)), CorrelationFn("exp", 1.0))


@given(st.floats(0.01, 20), st.lists(st.integers(0, 24), min_size=2, max_size=8), st.sampled_from(["exp", "sqexp"]))
def test_corr_matrix_properties(phi, r, kind):
    D = distance_matrix("h", [24] * len(r), r)
    R = build_corr_matrix(D, CorrelationFn(kind, phi))
    assert np.array_equal(R, R.T)
    assert np.all(np.diag(R) == 1)
    assert np.all((R > 0) & (R <= 1))


def test_monotonicity_grid():
    d = np.linspace(0, 5, 201)
    phis = np.linspace(0.05, 4, 80)
    for kind in (EXP, SQ):
        vals = np.array([CorrelationFn(kind, p)(d) for p in phis])
        # strictly decreasing in d while the value is representable
        dd = np.diff(vals, axis=1)
        assert np.all((dd < 0) | (vals[:, 1:] < 1e-300))
        # strictly decreasing in phi for d > 0
        assert np.all(np.diff(vals[:, 1:], axis=0) < 0)


def test_sqexp_dominates_exp_below_unit_distance():
    d = np.linspace(0.001, 0.999, 300)
    for phi in (0.1, 0.5, 1.0, 3.0):
        assert np.all(CorrelationFn(SQ, phi)(d) > CorrelationFn(EXP, phi)(d))
        assert np.all(CorrelationFn(SQ, phi)(d + 1.0) < CorrelationFn(EXP, phi)(d + 1.0))


def test_ties_pair():
    out, log = preprocess_ties([24] * 6, [10, 10, 3, 4, 5, 6], 0.2, 0.4, return_log=True)
    assert out == pytest.approx([10.1, 10.2, 3, 4, 5, 6])
    assert log.epsilon == pytest.approx(0.1)
    assert log.groups == [[0, 1]] and log.clamped == []


def test_ties_three_way_and_untouched():
    out = preprocess_ties([24] * 6, [5, 5, 5, 1, 2, 3], 0.2, 0.4)
    assert out == pytest.approx([5.1, 5.2, 5.3, 1, 2, 3])
    r = np.array([0, 3, 7, 9, 11, 20.0])
    assert np.array_equal(preprocess_ties([24] * 6, r, 0.2, 0.4), r)


def test_ties_equal_rates_different_sizes():
    out = preprocess_ties([14, 24, 24], [7, 12, 3], 0.2, 0.4)
    assert out == pytest.approx([7.2, 12.4, 3])


def test_ties_clamp_below_n():
    out, log = preprocess_ties([24] * 3, [24, 24, 1], 0.2, 0.4, return_log=True)
    eps = 0.2
    assert out[0] == pytest.approx(24 - eps / 10)
    assert out[1] == pytest.approx(24 - 2 * eps / 10)
    assert log.clamped == [0, 1]
    with pytest.raises(ValueError):
        preprocess_ties([24], [1], 0.2, 0.4)


@given(st.lists(st.integers(0, 24), min_size=2, max_size=8))
def test_ties_distinct_and_idempotent(r):
    n = [24] * len(r)
    out = preprocess_ties(n, r, 0.2, 0.4)
    rates = np.asarray(out) / 24
    diffs = np.abs(rates[:, None] - rates[None, :])[np.triu_indices(len(r), 1)]
    assert np.all(diffs > 0)
    assert np.array_equal(preprocess_ties(n, out, 0.2, 0.4), out)
    D = distance_matrix("b", n, out)
    assert np.all(D[np.triu_indices(len(r), 1)] > 0)


@given(st.lists(st.lists(st.integers(0, 24), min_size=6, max_size=6), min_size=1, max_size=6),
       st.lists(st.booleans(), min_size=6, max_size=6))
def test_batch_ties_match_scalar(rows, mask):
    r = np.array(rows)
    n = np.full_like(r, 24)
    active = np.tile(np.array(mask), (len(rows), 1))
    out = preprocess_ties_batch(n, r, active, 0.2, 0.4)
    for b in range(len(rows)):
        idx = np.flatnonzero(active[b])
        if idx.size >= 2:
            ref = preprocess_ties(n[b, idx], r[b, idx], 0.2, 0.4)
            assert out[b, idx] == pytest.approx(ref, abs=1e-12)
        rest = np.flatnonzero(~active[b])
        assert np.array_equal(out[b, rest], r[b, rest])
