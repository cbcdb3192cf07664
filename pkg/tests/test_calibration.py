import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from baskettrial.calibration import (CutoffCalib, PhiPriorCalib, calibrate_final_cutoff,
                                     calibrate_phi_prior, cutoff_from_probs, phi_interval,
                                     simulate_null, simulate_pair_distances)
from baskettrial.designs import TwoStageDesign
from baskettrial.errors import CalibrationError
from baskettrial.inference import IndependentSpec, McmcConfig

SMALL = dict(M=1000, n=(24, 24, 24))


# -- prior on the range parameter ----------------------------------------------

def test_interval_formula():
    res = calibrate_phi_prior(PhiPriorCalib(**SMALL), seed=1)
    assert res.a_lb == pytest.approx(-np.log(0.5) / res.d_t, rel=1e-14)
    assert res.a_ub == pytest.approx(-np.log(0.3) / res.d_t, rel=1e-14)
    assert res.a_lb < res.a_ub
    assert res.a == 1.0
    lo, hi = phi_interval(0.8, 0.3, 0.5, "sqexp")
    assert (lo, hi) == pytest.approx((-np.log(0.5) / 0.64, -np.log(0.3) / 0.64))


def test_pinned_and_drawn_shapes():
    h = calibrate_phi_prior(PhiPriorCalib(measure="h", **SMALL), seed=1)
    assert h.a == 1.5
    kl = calibrate_phi_prior(PhiPriorCalib(measure="kl", corr="sqexp", **SMALL), seed=1)
    assert kl.a == pytest.approx(0.5 * (kl.a_lb + kl.a_ub))
    drawn = calibrate_phi_prior(PhiPriorCalib(draw_a=True, **SMALL), seed=1)
    assert drawn.a_lb <= drawn.a <= drawn.a_ub
    assert calibrate_phi_prior(PhiPriorCalib(a_override=0.7, **SMALL), seed=1).a == 0.7


def test_equal_thresholds_collapse_interval():
    res = calibrate_phi_prior(PhiPriorCalib(rho_lb=0.4, rho_ub=0.4, **SMALL), seed=2)
    assert res.a_lb == res.a_ub


def test_quantile_is_type7():
    calib = PhiPriorCalib(**SMALL)
    d = simulate_pair_distances(calib, seed=3)
    assert d.shape == (2, 3, 1000)
    res = calibrate_phi_prior(calib, seed=3)
    s = np.sort(d.ravel())
    h = (s.size - 1) * 0.95
    assert res.d_t == pytest.approx(s[int(h)] + (h - int(h)) * (s[int(h) + 1] - s[int(h)]), rel=1e-14)


def test_distances_invariant_to_indication_order():
    a = simulate_pair_distances(PhiPriorCalib(M=1000, n=(14, 24, 20, 24)), seed=4)
    b = simulate_pair_distances(PhiPriorCalib(M=1000, n=(24, 20, 24, 14)), seed=4)
    assert np.array_equal(np.sort(a.ravel()), np.sort(b.ravel()))
    res_a = calibrate_phi_prior(PhiPriorCalib(M=1000, n=(14, 24, 20, 24)), seed=4)
    res_b = calibrate_phi_prior(PhiPriorCalib(M=1000, n=(24, 20, 24, 14)), seed=4)
    assert res_a == res_b


def test_degenerate_distances_raise():
    with pytest.raises(CalibrationError):
        calibrate_phi_prior(PhiPriorCalib(q0=1e-12, q1=2e-12, **SMALL))


def test_phi_calib_validation():
    with pytest.raises(ValueError):
        PhiPriorCalib(rho_lb=0.6, rho_ub=0.5)
    with pytest.raises(ValueError):
        PhiPriorCalib(M=999)
    with pytest.raises(ValueError):
        PhiPriorCalib(n=(24,))


# -- final cutoff ----------------------------------------------------------------

def test_cutoff_examples():
    fp = np.array([[0.99, 0.5], [0.95, 0.2], [0.9, -np.inf], [0.1, 0.97]])
    assert cutoff_from_probs(fp, 1.0) == 0.0
    # mean target, 8 cells, alpha 0.25 allows 2 rejections
    assert cutoff_from_probs(fp, 0.25) == 0.95
    assert cutoff_from_probs(fp, 0.125) == 0.97
    # max target, 4 replicates per indication, alpha 0.25 allows 1 per indication
    assert cutoff_from_probs(fp, 0.25, "max") == 0.95
    with pytest.raises(CalibrationError):
        cutoff_from_probs(np.full((10, 2), np.inf), 0.1)


prob_arrays = hnp.arrays(float, st.tuples(st.integers(5, 40), st.integers(1, 4)),
                         elements=st.one_of(st.floats(0, 1), st.just(-np.inf)))


@settings(max_examples=60)
@given(prob_arrays, st.floats(0.01, 0.99), st.sampled_from(["mean", "max"]))
def test_cutoff_is_smallest_admissible(fp, alpha, target):
    Q = cutoff_from_probs(fp, alpha, target)
    rate = lambda q: (np.mean(fp > q, axis=0).mean() if target == "mean"
                      else np.mean(fp > q, axis=0).max())
    assert rate(Q) <= alpha + 1e-12
    lower = fp[np.isfinite(fp) & (fp < Q)]
    if lower.size:
        assert rate(lower.max()) > alpha


@settings(max_examples=60)
@given(prob_arrays, st.floats(0.01, 0.98), st.floats(0.0, 0.5))
def test_cutoff_monotone_in_alpha(fp, alpha, step):
    hi = min(alpha + step, 0.99)
    assert cutoff_from_probs(fp, hi) <= cutoff_from_probs(fp, alpha)


def test_rejection_monotone_in_cutoff():
    batch = simulate_null(IndependentSpec(), TwoStageDesign(), 6, 300, McmcConfig(), 1)
    rates = [batch.rejected(q).mean() for q in np.linspace(0, 1, 101)]
    assert np.all(np.diff(rates) <= 0)


def test_independent_calibration_holds_on_fresh_seed():
    cfg = McmcConfig()
    res = calibrate_final_cutoff(IndependentSpec(), TwoStageDesign(), CutoffCalib(), cfg, seed=1)
    assert 0.5 < res.Q < 1 and res.n_failed == 0
    assert res.achieved.mean() <= 0.10
    fresh = simulate_null(IndependentSpec(), TwoStageDesign(Q=res.Q), 6, 2000, cfg, seed=2)
    rej = 100 * fresh.rejected(res.Q).mean(axis=0)
    assert np.all((rej >= 7.5) & (rej <= 12.5)), rej


def test_cutoff_calib_validation():
    with pytest.raises(ValueError):
        CutoffCalib(alpha=0.0)
    with pytest.raises(ValueError):
        CutoffCalib(target="median")
