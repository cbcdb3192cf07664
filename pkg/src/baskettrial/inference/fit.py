"""Fitting a model to one dataset and reading off posterior summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..divergence import IndicationData
from ..errors import ChainFailure
from ..rng import BatchRng, derive_stream_id
from .mcmc import McmcConfig, split_rhat
from .models import BhmSpec, CbhmSpec, ExnexSpec, IndependentSpec, LiuSpec
from .samplers import sample_batch


@dataclass
class PosteriorSamples:
    """Retained draws of the response rates, one column per indication."""
    draws: np.ndarray
    model: str = ""
    acceptance: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[0] < 1:
            raise ValueError("draws must be an S x I matrix with S >= 1")
        if not np.all((self.draws > 0) & (self.draws < 1)):
            raise ValueError("response-rate draws must lie strictly inside (0, 1)")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_indications(self) -> int:
        return self.draws.shape[1]

    def mean(self):
        return self.draws.mean(axis=0)

    def sd(self):
        return self.draws.std(axis=0, ddof=1) if self.n_draws > 1 else np.zeros(self.n_indications)

    def rhat(self):
        return split_rhat(self.draws)


def posterior_prob_exceeds(samples: PosteriorSamples, i: int, t: float) -> float:
    """Fraction of draws with ``p_i > t``."""
    if not 0 <= i < samples.n_indications:
        raise IndexError(f"indication index {i} out of range")
    return float(np.mean(samples.draws[:, i] > t))


def _as_arrays(data):
    """Accept a list of IndicationData / (n, r) pairs, or an ``(n, r)`` pair of arrays."""
    if isinstance(data, tuple) and len(data) == 2 and np.ndim(data[0]) == 1:
        n, r = data
    else:
        rows = [(d.n, d.r) if isinstance(d, IndicationData) else tuple(d) for d in data]
        n, r = zip(*rows) if rows else ((), ())
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    if n.size == 0:
        raise ValueError("need at least one indication")
    if np.any(n <= 0) or np.any(r < 0) or np.any(r > n):
        raise ValueError("each indication needs n > 0 and 0 <= r <= n")
    return n, r


def fit_model(spec, data, q0=0.2, q1=0.4, cfg: McmcConfig = McmcConfig(),
              init_delta=None) -> PosteriorSamples:
    """Fit any model spec to one dataset and keep all retained draws."""
    n, r = _as_arrays(data)
    I = n.size
    rng = BatchRng(cfg.seed, [derive_stream_id(cfg.stream)])
    res = sample_batch(spec, n[None], r[None], np.ones((1, I), dtype=bool), q0, q1,
                       np.broadcast_to(np.asarray(q0, dtype=float), (I,)), cfg, rng,
                       keep_draws=True, init_delta=init_delta)
    if res.failed[0]:
        raise ChainFailure(f"{spec.name} chain failed (non-finite state or repeated "
                           "singular covariance proposals)")
    acc = {k: np.asarray(v)[0] for k, v in res.accept.items()}
    hyper = {k: np.asarray(v)[:, 0] for k, v in res.trace.items()
             if np.asarray(v).ndim >= 2}
    return PosteriorSamples(res.draws[:, 0, :], spec.name, acc, hyper)


def fit_independent(data, q0=0.2, q1=0.4, cfg: McmcConfig = McmcConfig(),
                    spec: IndependentSpec = IndependentSpec()) -> PosteriorSamples:
    return fit_model(spec, data, q0, q1, cfg)


def fit_bhm(data, spec: BhmSpec = BhmSpec(), cfg: McmcConfig = McmcConfig(),
            q0=0.2, q1=0.4) -> PosteriorSamples:
    return fit_model(spec, data, q0, q1, cfg)


def fit_exnex(data, spec: ExnexSpec = ExnexSpec(), cfg: McmcConfig = McmcConfig(),
              q0=0.2, q1=0.4, init_delta=None) -> PosteriorSamples:
    return fit_model(spec, data, q0, q1, cfg, init_delta)


def fit_liu_bhmm(data, spec: LiuSpec = LiuSpec(), cfg: McmcConfig = McmcConfig(),
                 q0=0.2, q1=0.4, init_delta=None) -> PosteriorSamples:
    return fit_model(spec, data, q0, q1, cfg, init_delta)


def fit_cbhm(data, spec: CbhmSpec = CbhmSpec(), cfg: McmcConfig = McmcConfig(),
             q0=0.2, q1=0.4) -> PosteriorSamples:
    return fit_model(spec, data, q0, q1, cfg)
