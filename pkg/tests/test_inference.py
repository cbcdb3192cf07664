import numpy as np
import pytest
from scipy import special, stats

from baskettrial.errors import ChainFailure, InitError
from baskettrial.inference import (BhmSpec, CbhmSpec, ExnexSpec, IndependentSpec, LiuSpec,
                                   McmcConfig, PosteriorSamples, fit_bhm, fit_cbhm,
                                   fit_independent, jitter_cholesky, mvn_logpdf,
                                   posterior_prob_exceeds, run_mcmc, sample_batch, split_rhat)
from baskettrial.inference import samplers
from baskettrial.rng import BatchRng, RngStream, derive_stream_id

SHORT = McmcConfig(burn_in=1000, keep=3000, seed=4)
NULL_DATA = [(24, 5), (24, 4), (24, 6), (24, 3), (24, 5), (24, 7)]


def _chains(spec, n, r, B=10, cfg=SHORT, seed=7):
    rng = BatchRng(seed, [derive_stream_id(2, k) for k in range(B)])
    n = np.broadcast_to(np.asarray(n, dtype=float), (B, np.size(n)))
    r = np.broadcast_to(np.asarray(r, dtype=float), (B, np.size(r)))
    return sample_batch(spec, n, r, True, 0.2, 0.4, 0.2, cfg, rng)


# -- linear algebra ------------------------------------------------------------

def test_mvn_logpdf_standard_bivariate():
    assert mvn_logpdf([0, 0], [0, 0], np.eye(2)) == pytest.approx(-np.log(2 * np.pi), abs=1e-14)


def test_mvn_logpdf_against_dense_inverse():
    rs = np.random.default_rng(11)
    A = rs.normal(size=(5, 5))
    S = A @ A.T + 0.5 * np.eye(5)
    x, mu = rs.normal(size=5), rs.normal(size=5)
    d = x - mu
    ref = -0.5 * (5 * np.log(2 * np.pi) + np.linalg.slogdet(S)[1] + d @ np.linalg.inv(S) @ d)
    assert mvn_logpdf(x, mu, S) == pytest.approx(ref, abs=1e-10)
    assert mvn_logpdf(x, mu, S) == pytest.approx(stats.multivariate_normal(mu, S).logpdf(x),
                                                 abs=1e-10)


def test_mvn_logpdf_input_checks():
    with pytest.raises(ValueError):
        mvn_logpdf([0, 0], [0, 0], np.eye(3))
    with pytest.raises(ValueError):
        mvn_logpdf([0, 0], [0, 0], np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_jitter_rescues_singular_matrix():
    L, jit = jitter_cholesky(np.ones((3, 3)), return_jitter=True)
    assert jit > 0
    assert np.allclose(L @ L.T, np.ones((3, 3)) + jit * np.eye(3))


# -- generic sampler -----------------------------------------------------------

def test_run_mcmc_standard_normal():
    cfg = McmcConfig(burn_in=5000, keep=15000, seed=1)
    ch = run_mcmc(lambda x: -0.5 * float(x @ x), [3.0], cfg)
    assert abs(ch.samples.mean()) < 0.05
    assert abs(ch.samples.var() - 1.0) < 0.1
    assert 0.2 < ch.accept_rate[0] < 0.7


def test_run_mcmc_beta_on_logit_scale():
    # Beta(11, 15) for p = expit(theta), Jacobian included
    logpost = lambda th: float(11 * th[0] - 26 * np.logaddexp(0.0, th[0]))
    ch = run_mcmc(logpost, [0.0], McmcConfig(burn_in=2000, keep=20000, seed=2))
    p = special.expit(ch.samples[:, 0])
    assert p.mean() == pytest.approx(11 / 26, abs=0.01)
    assert np.mean(p > 0.2) == pytest.approx(stats.beta(11, 15).sf(0.2), abs=0.01)


def test_run_mcmc_errors():
    with pytest.raises(InitError):
        run_mcmc(lambda x: -np.inf, [0.0], McmcConfig(burn_in=1, keep=1))
    with pytest.raises(ChainFailure):
        run_mcmc(lambda x: 0.0 if x[0] == 0.0 else np.nan, [0.0], McmcConfig(burn_in=1, keep=1))
    with pytest.raises(ValueError):
        McmcConfig(keep=0)


def test_run_mcmc_reproducible():
    f = lambda x: -0.5 * float(x @ x)
    a = run_mcmc(f, [0.0, 1.0], McmcConfig(burn_in=100, keep=200, seed=9))
    b = run_mcmc(f, [0.0, 1.0], McmcConfig(burn_in=100, keep=200, seed=9))
    c = run_mcmc(f, [0.0, 1.0], McmcConfig(burn_in=100, keep=200, seed=10))
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_split_rhat():
    z = RngStream(3).normal((4000, 2))
    assert np.all(np.abs(split_rhat(z) - 1) < 0.01)
    drift = np.linspace(0, 5, 4000)[:, None] + z
    assert np.all(split_rhat(drift) > 1.5)


# -- posterior summaries -------------------------------------------------------

def test_posterior_prob_exceeds_examples():
    s = PosteriorSamples(np.array([[0.1, 0.5], [0.3, 0.6], [0.25, 0.7], [0.15, 0.2]]))
    assert posterior_prob_exceeds(s, 0, 0.2) == 0.5
    assert posterior_prob_exceeds(s, 1, 0.2) == 0.75
    assert posterior_prob_exceeds(s, 1, 0.99) == 0.0
    with pytest.raises(IndexError):
        posterior_prob_exceeds(s, 2, 0.2)
    with pytest.raises(ValueError):
        PosteriorSamples(np.array([[0.0, 0.5]]))


def test_independent_matches_beta_posterior():
    s = fit_independent([(24, 10), (14, 1)], cfg=McmcConfig(keep=50_000, seed=5))
    assert s.mean() == pytest.approx([11 / 26, 2 / 16], abs=0.004)
    assert posterior_prob_exceeds(s, 0, 0.2) == pytest.approx(stats.beta(11, 15).sf(0.2), abs=0.005)


def test_independent_binomial_law_exceedance():
    # the exact exceedance path agrees with the beta tail
    res = _chains(IndependentSpec(), [24, 14], [10, 1], B=1)
    assert res.prob_exceeds[0] == pytest.approx([stats.beta(11, 15).sf(0.2),
                                                 stats.beta(2, 14).sf(0.2)], abs=0.01)


def test_fit_reproducible_and_summaries():
    a = fit_bhm(NULL_DATA, cfg=SHORT)
    b = fit_bhm(NULL_DATA, cfg=SHORT)
    assert np.array_equal(a.draws, b.draws)
    assert a.draws.shape == (SHORT.keep, 6)
    assert np.all(a.sd() > 0)
    assert np.all(a.rhat() < 1.1)
    assert {"theta0", "sigma2"} <= set(a.hyper)


def test_fit_rejects_bad_data():
    with pytest.raises(ValueError):
        fit_bhm([(10, 11)], cfg=SHORT)
    with pytest.raises(ValueError):
        fit_bhm([], cfg=SHORT)


def test_bhm_shrinks_towards_common_mean():
    s = fit_bhm([(24, 2), (24, 12), (24, 12), (24, 12)], cfg=SHORT)
    assert s.mean()[0] > 3 / 24


def test_label_switching_invariance():
    perm = [3, 0, 5, 1, 4, 2]
    data = [(24, 2), (24, 4), (24, 6), (24, 9), (24, 11), (24, 14)]
    cfg = McmcConfig(burn_in=2000, keep=6000, seed=8)
    for fit in (fit_bhm, fit_cbhm):
        a = fit(data, cfg=cfg).mean()
        b = fit([data[k] for k in perm], cfg=cfg).mean()
        assert b == pytest.approx(a[perm], abs=0.015)


def test_cbhm_acceptance_rates_null_scenario():
    s = fit_cbhm(NULL_DATA, cfg=McmcConfig(burn_in=2000, keep=5000, seed=3))
    rates = np.concatenate([np.ravel(v) for v in s.acceptance.values()])
    assert np.all((rates >= 0.2) & (rates <= 0.6)), s.acceptance


def test_cbhm_distant_indications_decouple(monkeypatch):
    """With huge distances the correlation matrix is the identity."""
    n, r = [24, 24], [2, 22]
    cfg = McmcConfig(burn_in=1000, keep=3000)
    orig = samplers.distance_matrix
    monkeypatch.setattr(samplers, "distance_matrix", lambda *a: orig(*a) * 1e6)
    far = _chains(CbhmSpec(), n, r, cfg=cfg, seed=1).post_mean
    monkeypatch.setattr(samplers._CbhmSampler, "_corr",
                        lambda self, phi: self.Em.copy())
    ident = _chains(CbhmSpec(), n, r, cfg=cfg, seed=2).post_mean
    se = np.sqrt(far.var(axis=0, ddof=1) / len(far) + ident.var(axis=0, ddof=1) / len(ident))
    assert np.all(np.abs(far.mean(axis=0) - ident.mean(axis=0)) <= 4 * se + 1e-3)


def test_cbhm_close_indications_borrow_more():
    # identical-looking data pulls a low indication up more than far-apart data
    near = fit_cbhm([(24, 6), (24, 7), (24, 8)], cfg=SHORT).mean()[0]
    far = fit_cbhm([(24, 6), (24, 20), (24, 21)], cfg=SHORT).mean()[0]
    assert near > 6 / 24 - 0.02
    assert far < near + 0.05


def test_batching_invariance():
    spec = BhmSpec()
    n = np.full((3, 4), 24.0)
    r = np.array([[3, 5, 7, 9], [10, 12, 2, 1], [4, 4, 4, 4]], dtype=float)
    ids = [derive_stream_id(2, k) for k in range(3)]
    cfg = McmcConfig(burn_in=200, keep=300)
    full = sample_batch(spec, n, r, True, 0.2, 0.4, 0.2, cfg, BatchRng(5, ids))
    one = sample_batch(spec, n[1:2], r[1:2], True, 0.2, 0.4, 0.2, cfg, BatchRng(5, ids[1:2]))
    assert np.array_equal(full.post_mean[1], one.post_mean[0])


def test_inactive_indications_are_ignored():
    n = np.full((1, 3), 24.0)
    r = np.array([[6.0, 7.0, 24.0]])
    cfg = McmcConfig(burn_in=200, keep=300)
    for spec in (BhmSpec(), ExnexSpec(), LiuSpec(), CbhmSpec()):
        res = sample_batch(spec, n, r, [[True, True, False]], 0.2, 0.4, 0.2, cfg,
                           BatchRng(1, [derive_stream_id(2, 0)]))
        assert np.isnan(res.post_mean[0, 2]) and np.all(np.isfinite(res.post_mean[0, :2]))
        assert not res.failed[0]
