import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from baskettrial.divergence import (DistanceMeasure, IndicationData, b_distance, distance,
                                    distance_matrix, h_distance, kl_distance,
                                    numeric_distance_oracle)
from baskettrial.errors import NumericalError

MEASURES = list(DistanceMeasure)
GRID = np.arange(25)


def _mp_distances(ri, rj, n=24):
    """High-precision distances by adaptive mpmath quadrature of the defining integrals."""
    mpmath.mp.dps = 30
    ai, bi, aj, bj = ri + 1, n - ri + 1, rj + 1, n - rj + 1
    lbi, lbj = mpmath.log(mpmath.beta(ai, bi)), mpmath.log(mpmath.beta(aj, bj))
    lfi = lambda p: (ai - 1) * mpmath.log(p) + (bi - 1) * mpmath.log(1 - p) - lbi
    lfj = lambda p: (aj - 1) * mpmath.log(p) + (bj - 1) * mpmath.log(1 - p) - lbj
    bc = mpmath.quad(lambda p: mpmath.exp((lfi(p) + lfj(p)) / 2), [0, 0.25, 0.5, 0.75, 1])
    kl = mpmath.quad(lambda p: (mpmath.exp(lfi(p)) - mpmath.exp(lfj(p))) * (lfi(p) - lfj(p)) / 2,
                     [0, 0.25, 0.5, 0.75, 1])
    return float(-mpmath.log(bc)), float(mpmath.sqrt(1 - bc)), float(kl)


@pytest.mark.parametrize("ri,rj", [(10, 0), (10, 20), (10, 12), (3, 4), (0, 24)])
def test_closed_forms_against_mpmath(ri, rj):
    b, h, kl = _mp_distances(ri, rj)
    di, dj = IndicationData(24, ri), IndicationData(24, rj)
    assert b_distance(di, dj) == pytest.approx(b, abs=1e-10)
    assert h_distance(di, dj) == pytest.approx(h, abs=1e-10)
    assert kl_distance(di, dj) == pytest.approx(kl, abs=1e-8)


def test_identical_inputs_are_zero():
    d = IndicationData(24, 10)
    for m in MEASURES:
        assert distance(m, d, d) == 0.0
    assert numeric_distance_oracle("h", d, d) < 1e-9


def test_oracle_self_consistency_examples():
    assert abs(numeric_distance_oracle("b", IndicationData(24, 10), IndicationData(24, 0))
               - b_distance(IndicationData(24, 10), IndicationData(24, 0))) <= 1e-8
    assert abs(numeric_distance_oracle("kl", IndicationData(24, 10), IndicationData(24, 12))
               - kl_distance(IndicationData(24, 10), IndicationData(24, 12))) <= 1e-6


def test_hellinger_is_function_of_bhattacharyya():
    di, dj = IndicationData(24, 10), IndicationData(24, 3)
    assert h_distance(di, dj) == pytest.approx(math.sqrt(1 - math.exp(-b_distance(di, dj))), abs=1e-15)


def test_oracle_rejects_small_grid():
    with pytest.raises(ValueError):
        numeric_distance_oracle("b", IndicationData(24, 1), IndicationData(24, 2), grid_points=100)


def test_oracle_reports_non_finite(monkeypatch):
    import baskettrial.divergence as dv
    monkeypatch.setattr(dv, "_log_beta_pdf", lambda a, b, lp, lq: np.full_like(lp, np.inf))
    for m in MEASURES:
        with pytest.raises(NumericalError):
            numeric_distance_oracle(m, IndicationData(24, 1), IndicationData(24, 2))


def test_indication_data_validation():
    with pytest.raises(ValueError):
        IndicationData(10, 11)
    with pytest.raises(ValueError):
        DistanceMeasure.parse("tv")
    assert DistanceMeasure.parse("KL") is DistanceMeasure.SYMMETRIZED_KL


def test_exhaustive_symmetry_identity_range():
    n = np.full(25, 24)
    for m in MEASURES:
        D = distance_matrix(m, n, GRID)
        assert np.array_equal(D, D.T)
        off = ~np.eye(25, dtype=bool)
        assert np.all(D[off] > 0)
        assert np.all(np.diag(D) == 0)
        if m is DistanceMeasure.HELLINGER:
            assert np.all(D < 1)


def test_figure_sweep_monotone():
    # r1 = 10 fixed, second indication swept over 0..24
    for m in MEASURES:
        d = np.array([distance(m, IndicationData(24, 10), IndicationData(24, r)) for r in GRID])
        assert np.all(np.diff(d[:11]) <= 0)
        assert np.all(np.diff(d[10:]) >= 0)


def test_distance_matrix_matches_pairwise():
    n, r = [24, 14, 24], [10, 3, 0]
    for m in MEASURES:
        D = distance_matrix(m, n, r)
        for i, j in itertools.permutations(range(3), 2):
            assert D[i, j] == pytest.approx(
                distance(m, IndicationData(n[i], r[i]), IndicationData(n[j], r[j])), rel=1e-14)


@given(st.integers(1, 60), st.data())
def test_symmetry_property(n, data):
    ri = data.draw(st.floats(0, n))
    rj = data.draw(st.floats(0, n))
    for m in MEASURES:
        a = distance(m, IndicationData(n, ri), IndicationData(n, rj))
        b = distance(m, IndicationData(n, rj), IndicationData(n, ri))
        assert a == b
        assert a >= 0
