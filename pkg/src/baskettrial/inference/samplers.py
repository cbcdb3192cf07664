"""Batched Metropolis-within-Gibbs samplers, one independent chain per replicate.

Every sampler advances ``B`` chains (one per simulated trial) in lockstep with
numpy, drawing from a :class:`~baskettrial.rng.BatchRng` on a fixed schedule,
so chain ``b`` is identical whether it runs alone or inside a large batch.

Indications are switched on per chain through ``active`` (shape ``(B, I)``);
inactive ones are dropped from the likelihood and from the hierarchy. This is
how stage-2 analyses restricted to continuing indications are run.

Instead of storing draws, chains accumulate what the trial simulations need:
counts of ``theta_i > logit(t_i)`` and running sums of ``p_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special, stats as sps

from ..divergence import distance_matrix
from ..kernel import CorrelationKind, preprocess_ties_batch
from ..rng import BatchRng
from .linalg import batch_cholesky, forward_solve
from .mcmc import McmcConfig, ScaleAdapter, metropolis_accept
from .models import BhmSpec, CbhmSpec, ExnexSpec, IndependentSpec, LiuSpec, resolve

_LOG_2PI = np.log(2.0 * np.pi)
_P_HI = np.nextafter(1.0, 0.0)


def _norm_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def to_prob(theta):
    """inv-logit kept strictly inside (0, 1)."""
    return np.clip(special.expit(theta), np.finfo(float).tiny, _P_HI)


@dataclass
class BatchResult:
    """Per-chain posterior summaries; entries for inactive indications are NaN."""
    prob_exceeds: np.ndarray
    post_mean: np.ndarray
    failed: np.ndarray
    accept: dict = field(default_factory=dict)
    draws: Optional[np.ndarray] = None      # (S, B, I) response-rate draws
    trace: dict = field(default_factory=dict)  # hyperparameter draws, (S, B, ...)


class _Sampler:
    """Shared state and the random-walk update of the indication effects."""

    def __init__(self, spec, n, r, active, q0, q1, cfg: McmcConfig, rng: BatchRng,
                 init_scale=1.0):
        self.spec = spec
        self.cfg = cfg
        self.rng = rng
        self.n = np.asarray(n, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.m = np.asarray(active, dtype=bool)
        self.mf = self.m.astype(float)
        self.k = self.m.sum(axis=1)
        self.B, self.I = self.n.shape
        self.q0, self.q1 = q0, q1
        self.res = resolve(spec, q0, q1)
        safe_n = np.where(self.m, self.n, 0.0)
        self.theta = np.where(self.m, special.logit((np.where(self.m, self.r, 0.0) + 0.5)
                                                    / (safe_n + 1.0)), 0.0)
        self.theta_adapt = ScaleAdapter(np.full((self.B, self.I), init_scale),
                                        cfg.target_accept, cfg)
        self.theta_acc = np.zeros((self.B, self.I))
        self.failures = np.zeros(self.B)
        self.proposals = np.zeros(self.B)

    def loglik(self, th):
        return self.r * th - self.n * np.logaddexp(0.0, th)

    def theta_log_prior(self, th):
        raise NotImplementedError

    def update_theta(self, t):
        z = self.rng.normal(self.I)
        u = self.rng.uniform(self.I)
        prop = self.theta + self.theta_adapt.scale * z
        lr = (self.loglik(prop) - self.loglik(self.theta)
              + self.theta_log_prior(prop) - self.theta_log_prior(self.theta))
        acc, prob = metropolis_accept(lr, u)
        acc &= self.m
        self.theta = np.where(acc, prop, self.theta)
        self.theta_adapt.step(t, prob, self.m)
        if t >= self.cfg.burn_in:
            self.theta_acc += acc

    def sweep(self, t):
        raise NotImplementedError

    def hyper(self) -> dict:
        return {}

    def acceptance(self) -> dict:
        with np.errstate(invalid="ignore"):
            return {"theta": np.where(self.m, self.theta_acc / self.cfg.keep, np.nan)}


def _masked_sum(x, mask):
    return np.sum(np.where(mask, x, 0.0), axis=1)


class _BhmSampler(_Sampler):
    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.mu_mean = self.res.bhm_mu_mean
        self.theta0 = _masked_sum(self.theta, self.m) / np.maximum(self.k, 1)
        self.lam = np.ones(self.B)           # precision 1 / sigma2

    def theta_log_prior(self, th):
        return -0.5 * self.lam[:, None] * (th - self.theta0[:, None]) ** 2

    def sweep(self, t):
        spec: BhmSpec = self.spec
        self.update_theta(t)
        z = self.rng.normal()
        prec = 1.0 / spec.mu_var + self.k * self.lam
        mean = (self.mu_mean / spec.mu_var + self.lam * _masked_sum(self.theta, self.m)) / prec
        self.theta0 = mean + z / np.sqrt(prec)
        ss = _masked_sum((self.theta - self.theta0[:, None]) ** 2, self.m)
        g = self.rng.gamma(spec.sigma2_prior.shape + 0.5 * self.k)
        self.lam = g / (spec.sigma2_prior.rate + 0.5 * ss)

    def hyper(self):
        return {"theta0": self.theta0, "sigma2": 1.0 / self.lam}


class _ExnexSampler(_Sampler):
    def __init__(self, *args, init_delta=None, **kw):
        super().__init__(*args, **kw)
        spec: ExnexSpec = self.spec
        pi = spec.prior_ex_prob
        with np.errstate(divide="ignore"):
            self.log_pi, self.log_1mpi = np.log(pi), np.log1p(-pi)
        self.nex_mean = np.broadcast_to(self.res.nex_means, (self.I,))[None, :]
        self.mu0 = _masked_sum(self.theta, self.m) / np.maximum(self.k, 1)
        self.s0 = np.ones(self.B)
        self.s0_adapt = ScaleAdapter(np.full(self.B, 0.5), self.cfg.target_accept, self.cfg)
        self.s0_acc = np.zeros(self.B)
        if init_delta is None:
            init_delta = 1 if pi > 0 else 0
        self.delta = np.full((self.B, self.I), bool(init_delta)) & (pi > 0)
        if pi == 1.0:
            self.delta[:] = True
        self.delta_sum = np.zeros((self.B, self.I))

    def _components(self, th):
        ex = self.log_pi + _norm_logpdf(th, self.mu0[:, None], self.s0[:, None])
        nex = self.log_1mpi + _norm_logpdf(th, self.nex_mean, self.spec.nex_var)
        return ex, nex

    def theta_log_prior(self, th):
        ex, nex = self._components(th)
        return np.logaddexp(ex, nex)

    def _s0_log_target(self, s, kk, ss):
        spec: ExnexSpec = self.spec
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = (-0.5 * kk * np.log(s) - 0.5 * ss / s
                  - 0.5 * (s - spec.s0_mean) ** 2 / spec.s0_var + np.log(s))
        return np.where(s > spec.s0_lower, lt, -np.inf)

    def sweep(self, t):
        spec: ExnexSpec = self.spec
        self.update_theta(t)
        # indicators, exact two-point full conditional
        u = self.rng.uniform(self.I)
        ex, nex = self._components(self.theta)
        with np.errstate(invalid="ignore"):
            p_ex = np.exp(ex - np.logaddexp(ex, nex))
        self.delta = u < np.nan_to_num(p_ex, nan=0.0)
        members = self.m & self.delta
        kk = members.sum(axis=1)
        # EX mean
        z = self.rng.normal()
        prec = 1.0 / spec.mu0_var + kk / self.s0
        mean = (_masked_sum(self.theta, members) / self.s0) / prec
        self.mu0 = mean + z / np.sqrt(prec)
        # EX variance, random walk on log scale
        z = self.rng.normal()
        u = self.rng.uniform()
        ss = _masked_sum((self.theta - self.mu0[:, None]) ** 2, members)
        prop = self.s0 * np.exp(self.s0_adapt.scale * z)
        lr = self._s0_log_target(prop, kk, ss) - self._s0_log_target(self.s0, kk, ss)
        acc, prob = metropolis_accept(lr, u)
        self.s0 = np.where(acc, prop, self.s0)
        self.s0_adapt.step(t, prob)
        if t >= self.cfg.burn_in:
            self.s0_acc += acc
            self.delta_sum += self.delta

    def hyper(self):
        return {"mu0": self.mu0, "s0": self.s0}

    def acceptance(self):
        out = super().acceptance()
        out["s0"] = self.s0_acc / self.cfg.keep
        return out


class _LiuSampler(_Sampler):
    def __init__(self, *args, init_delta=None, **kw):
        super().__init__(*args, **kw)
        spec: LiuSpec = self.spec
        self.g = np.array(self.res.liu_g)
        self.tau2 = np.array(spec.tau2, dtype=float)
        self.log_w = np.log([spec.weight, 1.0 - spec.weight])
        self.mu = np.tile(self.g, (self.B, 1))
        self.lam = np.ones((self.B, 2))
        if init_delta is None:
            # nearest component mean
            self.delta = np.abs(self.theta - self.g[0]) <= np.abs(self.theta - self.g[1])
        else:
            self.delta = np.full((self.B, self.I), bool(init_delta))
        self.delta_sum = np.zeros((self.B, self.I))

    def _components(self, th):
        c1 = self.log_w[0] + _norm_logpdf(th, self.mu[:, :1], 1.0 / self.lam[:, :1])
        c2 = self.log_w[1] + _norm_logpdf(th, self.mu[:, 1:], 1.0 / self.lam[:, 1:])
        return c1, c2

    def theta_log_prior(self, th):
        return np.logaddexp(*self._components(th))

    def sweep(self, t):
        spec: LiuSpec = self.spec
        self.update_theta(t)
        u = self.rng.uniform(self.I)
        c1, c2 = self._components(self.theta)
        self.delta = u < np.exp(c1 - np.logaddexp(c1, c2))
        groups = (self.m & self.delta, self.m & ~self.delta)
        kk = np.stack([grp.sum(axis=1) for grp in groups], axis=1)
        z = self.rng.normal(2)
        for c, members in enumerate(groups):
            prec = 1.0 / self.tau2[c] + kk[:, c] * self.lam[:, c]
            mean = (self.g[c] / self.tau2[c]
                    + self.lam[:, c] * _masked_sum(self.theta, members)) / prec
            self.mu[:, c] = mean + z[:, c] / np.sqrt(prec)
        ss = np.stack([_masked_sum((self.theta - self.mu[:, c:c + 1]) ** 2, members)
                       for c, members in enumerate(groups)], axis=1)
        gam = self.rng.gamma(spec.sigma2_prior.shape + 0.5 * kk, 2)
        self.lam = gam / (spec.sigma2_prior.rate + 0.5 * ss)
        if t >= self.cfg.burn_in:
            self.delta_sum += self.delta

    def hyper(self):
        return {"mu": self.mu, "sigma2": 1.0 / self.lam}


class _CbhmSampler(_Sampler):
    """theta integrated over the correlated and independent effects:
    theta ~ MVN(theta0 * 1, sigma2 * R(phi) + tau2 * I).

    Indication effects get sequential scalar random-walk updates using the
    conditional normal implied by the current precision matrix; theta0 and
    sigma0_2 are Gibbs steps; sigma2, tau2 and phi are log-scale random walks
    whose proposals need a fresh Cholesky factor (a failed factorisation
    rejects the proposal).
    """

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        spec: CbhmSpec = self.spec
        r_dist = self.r
        if spec.tie_break and self.I > 1:
            r_dist = preprocess_ties_batch(self.n, self.r, self.m, self.q0, self.q1)
        D = distance_matrix(spec.measure, np.where(self.m, self.n, 0.0),
                            np.where(self.m, r_dist, 0.0))
        self.D = D * D if spec.corr is CorrelationKind.SQUARED_EXPONENTIAL else D
        mm = (self.m[:, :, None] & self.m[:, None, :]).astype(float)
        eye = np.eye(self.I)
        self.mmf = mm
        self.Em = eye * mm                  # identity on the active block
        self.Ei = eye * (1.0 - mm)          # identity on inactive coordinates
        self.mu0 = self.res.cbhm_mu0
        self.theta0 = _masked_sum(self.theta, self.m) / np.maximum(self.k, 1)
        self.s0 = np.ones(self.B)
        self.params = {
            "sigma2": np.full(self.B, spec.sigma2_prior.initial()),
            "tau2": np.full(self.B, spec.tau2_prior.initial()),
            "phi": np.full(self.B, spec.phi_prior.initial()),
        }
        self.priors = {"sigma2": spec.sigma2_prior, "tau2": spec.tau2_prior,
                       "phi": spec.phi_prior}
        self.adapt = {k: ScaleAdapter(np.full(self.B, 0.5), self.cfg.target_accept, self.cfg)
                      for k in self.params}
        self.acc = {k: np.zeros(self.B) for k in self.params}
        self.R = self._corr(self.params["phi"])
        self.Sigma = self._cov(self.params["sigma2"], self.params["tau2"], self.R)
        self.L, ok, self.Sigma = batch_cholesky(self.Sigma, self.cfg.jitter_schedule, True)
        self.init_failed = ~ok

    def _corr(self, phi):
        """Correlation matrix restricted to the active block (zeros elsewhere)."""
        return np.exp(-phi[:, None, None] * self.D) * self.mmf

    def _cov(self, sig2, tau2, R):
        return sig2[:, None, None] * R + (tau2[:, None, None] * self.Em + self.Ei)

    def _mvn(self, e, L):
        z = forward_solve(L, e)
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        return -0.5 * (logdet + np.sum(z * z, axis=-1))

    def sweep(self, t):
        cfg = self.cfg
        burn = t >= cfg.burn_in
        spec: CbhmSpec = self.spec
        Lam = np.linalg.inv(self.Sigma)
        # indication effects, one coordinate at a time
        z = self.rng.normal(self.I)
        u = self.rng.uniform(self.I)
        e = np.where(self.m, self.theta - self.theta0[:, None], 0.0)
        scale = self.theta_adapt.scale
        probs = np.zeros((self.B, self.I))
        for i in range(self.I):
            lii = Lam[:, i, i]
            c = np.einsum("bj,bj->b", Lam[:, i, :], e) - lii * e[:, i]
            cm = -c / lii
            ei = e[:, i]
            ep = ei + scale[:, i] * z[:, i]
            n_i, r_i = self.n[:, i], self.r[:, i]
            th0 = self.theta0
            lr = (r_i * (ep - ei) - n_i * (np.logaddexp(0.0, th0 + ep) - np.logaddexp(0.0, th0 + ei))
                  - 0.5 * lii * ((ep - cm) ** 2 - (ei - cm) ** 2))
            acc, prob = metropolis_accept(lr, u[:, i])
            acc &= self.m[:, i]
            e[:, i] = np.where(acc, ep, ei)
            probs[:, i] = prob
            if burn:
                self.theta_acc[:, i] += acc
        self.theta_adapt.step(t, probs, self.m)
        self.theta = np.where(self.m, self.theta0[:, None] + e, 0.0)
        # common mean
        zz = self.rng.normal()
        mf = self.mf
        a = np.einsum("bi,bij,bj->b", mf, Lam, mf)
        b = np.einsum("bi,bij,bj->b", mf, Lam, self.theta * mf)
        prec = 1.0 / self.s0 + a
        self.theta0 = (self.mu0 / self.s0 + b) / prec + zz / np.sqrt(prec)
        g = self.rng.gamma(spec.sigma0_prior.shape + 0.5)
        self.s0 = (spec.sigma0_prior.rate + 0.5 * (self.theta0 - self.mu0) ** 2) / g
        # covariance parameters
        e = np.where(self.m, self.theta - self.theta0[:, None], 0.0)
        cur = self._mvn(e, self.L)
        for name in ("sigma2", "tau2", "phi"):
            zp = self.rng.normal()
            up = self.rng.uniform()
            x = self.params[name]
            xp = x * np.exp(self.adapt[name].scale * zp)
            prior = self.priors[name]
            if name == "phi":
                Rp = self._corr(xp)
                S = self._cov(self.params["sigma2"], self.params["tau2"], Rp)
            elif name == "sigma2":
                Rp = self.R
                S = self._cov(xp, self.params["tau2"], Rp)
            else:
                Rp = self.R
                S = self._cov(self.params["sigma2"], xp, Rp)
            inside = np.isfinite(prior.logpdf(xp))
            Lp, ok, S = batch_cholesky(S, cfg.jitter_schedule, True)
            new = self._mvn(e, Lp)
            lr = (new + prior.logpdf(xp) + np.log(xp)) - (cur + prior.logpdf(x) + np.log(x))
            lr = np.where(ok & inside, lr, -np.inf)
            acc, prob = metropolis_accept(lr, up)
            self.proposals += 1
            self.failures += ~ok & inside
            self.params[name] = np.where(acc, xp, x)
            acc3 = acc[:, None, None]
            self.L = np.where(acc3, Lp, self.L)
            self.Sigma = np.where(acc3, S, self.Sigma)
            cur = np.where(acc, new, cur)
            if name == "phi":
                self.R = np.where(acc3, Rp, self.R)
            self.adapt[name].step(t, prob)
            if burn:
                self.acc[name] += acc

    def hyper(self):
        return {"theta0": self.theta0, "sigma0_2": self.s0, **self.params}

    def acceptance(self):
        out = super().acceptance()
        out.update({k: v / self.cfg.keep for k, v in self.acc.items()})
        return out

    @property
    def failed(self):
        with np.errstate(invalid="ignore"):
            return self.init_failed | (self.failures > 0.5 * np.maximum(self.proposals, 1))


_SAMPLERS = {"bhm": _BhmSampler, "exnex": _ExnexSampler, "liu": _LiuSampler, "cbhm": _CbhmSampler}


def _independent_batch(spec: IndependentSpec, n, r, active, thresholds, cfg, rng, keep_draws):
    a = spec.prior.alpha + r
    b = spec.prior.beta + n - r
    B, I = n.shape
    tail = special.betaincc(a, b, thresholds)
    u = rng.uniform(I)
    if spec.exceedance == "sampled":
        # the count of keep i.i.d. posterior draws above t is Binomial(keep, tail)
        prob = sps.binom.ppf(u, cfg.keep, tail) / cfg.keep
    else:
        prob = tail
    mean = a / (a + b)
    draws = None
    if keep_draws:
        draws = np.clip(special.betaincinv(a[None], b[None],
                                           np.moveaxis(rng.uniform((cfg.keep, I)), 1, 0)),
                        np.finfo(float).tiny, _P_HI)
        # sampled probabilities consistent with the stored draws
        if spec.exceedance == "sampled":
            prob = np.mean(draws > thresholds, axis=0)
    nan = np.nan
    return BatchResult(np.where(active, prob, nan), np.where(active, mean, nan),
                       np.zeros(B, dtype=bool), {}, draws)


def sample_batch(spec, n, r, active, q0, q1, thresholds, cfg: McmcConfig, rng: BatchRng,
                 keep_draws: bool = False, init_delta=None) -> BatchResult:
    """Run one chain per row of ``n``/``r`` and summarise its posterior.

    Parameters
    ----------
    n, r : (B, I) arrays of sample sizes and responder counts.
    active : (B, I) bool, indications included in each chain's model.
    q0, q1 : per-indication (or scalar) null and target response rates.
    thresholds : (I,) or (B, I) response-rate thresholds for ``Pr(p_i > t_i)``.
    keep_draws : store every retained ``p`` draw (memory ``keep * B * I``).
    """
    n = np.atleast_2d(np.asarray(n, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    active = np.broadcast_to(np.asarray(active, dtype=bool), n.shape)
    if np.any(r > n) or np.any(r < 0):
        raise ValueError("responder counts must satisfy 0 <= r <= n")
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), n.shape)
    I = n.shape[1]
    q0 = np.broadcast_to(np.asarray(q0, dtype=float), (I,))
    q1 = np.broadcast_to(np.asarray(q1, dtype=float), (I,))
    if spec.name == "independent":
        return _independent_batch(spec, n, r, active, thresholds, cfg, rng, keep_draws)
    cls = _SAMPLERS[spec.name]
    extra = {"init_delta": init_delta} if spec.name in ("exnex", "liu") else {}
    sampler = cls(spec, n, r, active, q0, q1, cfg, rng, **extra)
    with np.errstate(divide="ignore"):
        logit_t = special.logit(thresholds)
    exceed = np.zeros(n.shape)
    psum = np.zeros(n.shape)
    draws = np.empty((cfg.keep,) + n.shape) if keep_draws else None
    trace = {}
    for t in range(cfg.burn_in + cfg.keep):
        sampler.sweep(t)
        if t >= cfg.burn_in:
            s = t - cfg.burn_in
            p = to_prob(sampler.theta)
            exceed += sampler.theta > logit_t
            psum += p
            if keep_draws:
                draws[s] = p
                for key, val in sampler.hyper().items():
                    if key not in trace:
                        trace[key] = np.empty((cfg.keep,) + np.shape(val))
                    trace[key][s] = val
    failed = ~np.all(np.isfinite(np.where(active, sampler.theta, 0.0)), axis=1)
    if spec.name == "cbhm":
        failed |= sampler.failed
    for val in sampler.hyper().values():
        v = np.asarray(val).reshape(n.shape[0], -1)
        failed |= ~np.all(np.isfinite(v), axis=1)
    nan = np.nan
    res = BatchResult(np.where(active, exceed / cfg.keep, nan),
                      np.where(active, psum / cfg.keep, nan),
                      failed, sampler.acceptance(), draws, trace)
    if hasattr(sampler, "delta_sum"):
        res.trace["ex_or_first_share"] = np.where(active, sampler.delta_sum / cfg.keep, nan)
    return res
