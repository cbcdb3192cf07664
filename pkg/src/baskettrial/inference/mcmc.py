"""Adaptive random-walk Metropolis-within-Gibbs.

Proposal scales are tuned on the log scale by a Robbins-Monro recursion on
the acceptance probability during burn-in and frozen afterwards, so the
retained chain is a plain (non-adaptive) Metropolis chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ChainFailure, InitError
from ..rng import RngStream
from .linalg import JITTER_SCHEDULE


@dataclass(frozen=True)
class McmcConfig:
    burn_in: int = 5000
    keep: int = 10000
    adapt_window: int = 50
    target_accept: float = 0.44
    target_accept_block: float = 0.23
    jitter_schedule: tuple = JITTER_SCHEDULE
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.keep < 1:
            raise ValueError("keep must be >= 1")
        if not 0 < self.target_accept < 1 or not 0 < self.target_accept_block < 1:
            raise ValueError("target acceptance rates must lie in (0, 1)")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be >= 1")


class ScaleAdapter:
    """Per-chain, per-coordinate log proposal scales.

    ``step`` uses the gain ``(1 + t / adapt_window) ** -0.6``, where ``t``
    counts sweeps; the adapt window sets how long the gain stays near 1.
    """

    def __init__(self, init_scale, target: float, cfg: McmcConfig):
        self.log_scale = np.log(np.asarray(init_scale, dtype=float)).copy()
        self.target = target
        self.window = cfg.adapt_window
        self.burn_in = cfg.burn_in

    @property
    def scale(self):
        return np.exp(self.log_scale)

    def step(self, t: int, accept_prob, mask=None):
        if t >= self.burn_in:
            return
        gain = (1.0 + t / self.window) ** -0.6
        delta = gain * (np.nan_to_num(accept_prob, nan=0.0) - self.target)
        if mask is not None:
            delta = np.where(mask, delta, 0.0)
        self.log_scale = np.clip(self.log_scale + delta, -12.0, 6.0)


def metropolis_accept(log_ratio, u):
    """Boolean accept decisions and the clipped acceptance probability."""
    with np.errstate(over="ignore", invalid="ignore"):
        lr = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
        prob = np.exp(np.minimum(lr, 0.0))
    return np.log(u) < lr, prob


@dataclass
class Chain:
    samples: np.ndarray
    accept_rate: np.ndarray
    scales: np.ndarray
    extra: dict = field(default_factory=dict)


def run_mcmc(logpost, init, cfg: McmcConfig = McmcConfig(), rng=None, init_scale=1.0) -> Chain:
    """Metropolis-within-Gibbs on an arbitrary log density over R^d.

    Each sweep updates every coordinate once with a Gaussian random-walk
    proposal. Returns the ``keep`` post-burn-in states and the per-coordinate
    acceptance rates measured after adaptation stopped.
    """
    x = np.array(init, dtype=float, ndmin=1)
    d = x.size
    rng = rng if rng is not None else RngStream(cfg.seed, cfg.stream)
    lp = float(logpost(x))
    if not np.isfinite(lp):
        raise InitError(f"log posterior is {lp} at the initial state")
    adapter = ScaleAdapter(np.broadcast_to(init_scale, (d,)), cfg.target_accept, cfg)
    out = np.empty((cfg.keep, d))
    accepted = np.zeros(d)
    total = cfg.burn_in + cfg.keep
    for t in range(total):
        z = rng.normal(d)
        u = rng.uniform(d)
        scale = adapter.scale
        probs = np.empty(d)
        for k in range(d):
            prop = x.copy()
            prop[k] += scale[k] * z[k]
            lp_new = float(logpost(prop))
            if np.isnan(lp_new) or lp_new == np.inf:
                raise ChainFailure(f"log posterior evaluated to {lp_new} at sweep {t}")
            acc, prob = metropolis_accept(lp_new - lp, u[k])
            probs[k] = prob
            if acc:
                x, lp = prop, lp_new
                if t >= cfg.burn_in:
                    accepted[k] += 1
        adapter.step(t, probs)
        if t >= cfg.burn_in:
            out[t - cfg.burn_in] = x
    return Chain(out, accepted / cfg.keep, adapter.scale)


def split_rhat(draws) -> np.ndarray:
    """Split-chain potential scale reduction for ``(S, k)`` draws of one chain."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    half = draws.shape[0] // 2
    if half < 2:
        return np.full(draws.shape[1], np.nan)
    chains = np.stack([draws[:half], draws[half:2 * half]])
    w = chains.var(axis=1, ddof=1).mean(axis=0)
    b = half * chains.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (half - 1) / half * w + b / half
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_plus / w)


def batch_means_se(x, n_batches: int = 25) -> float:
    """Monte Carlo standard error of the mean of a correlated series."""
    x = np.asarray(x, dtype=float)
    m = len(x) // n_batches
    if m < 2:
        return float(np.std(x, ddof=1) / np.sqrt(len(x)))
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(n_batches))
