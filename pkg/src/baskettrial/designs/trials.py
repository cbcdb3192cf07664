"""Two-stage basket trial simulation.

Two designs are simulated:

* the posterior-probability design: an interim futility look at
  ``Pr(p_i > (q0_i + q1_i) / 2 | stage 1) < Qf``, a refit on the continuing
  indications, and a final call ``Pr(p_i > q0_i | data) > Q``;
* Liu's two-path design: Cochran's Q test decides between per-indication
  Simon designs (heterogeneous path) and predictive-power futility followed
  by a two-component mixture model (homogeneous path).

Replicates are simulated in batches. Patient outcomes come from a data stream
keyed by the replicate only, so every method sees the same patients; MCMC
streams are keyed by (method index, replicate, stage).

The final cutoff ``Q`` is applied after simulation: a batch stores each
indication's final exceedance probability, with ``-inf`` for indications
that stopped early (never rejected) and ``+inf`` / ``-inf`` for decisions
made by Simon's rule. Any ``Q`` can then be evaluated on the same batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ChainFailure
from ..inference.mcmc import McmcConfig
from ..inference.models import LiuSpec
from ..inference.samplers import sample_batch
from ..rng import BatchRng, derive_stream_id
from .cochran import cochran_q_arrays
from .predictive import predictive_power_table
from .simon import SimonDesign, simon_minimax

DATA_TAG = 1
MCMC_TAG = 2

PATH_STANDARD = 0
PATH_HOMOGENEOUS = 1
PATH_HETEROGENEOUS = 2


def _vec(x, I, dtype=float):
    a = np.asarray(x, dtype=dtype)
    if a.ndim == 0:
        return np.full(I, a, dtype=dtype)
    if a.shape != (I,):
        raise ValueError(f"expected {I} values, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class TwoStageDesign:
    """Per-indication sizes, interim cutoff ``Qf`` and final cutoff ``Q``.

    Scalars broadcast over indications. ``Q`` may be left ``None`` until calibrated.
    """
    n1: object = 14
    n: object = 24
    Qf: float = 0.05
    Q: Optional[float] = None
    q0: object = 0.2
    q1: object = 0.4

    def __post_init__(self):
        n1, n = np.broadcast_arrays(np.asarray(self.n1), np.asarray(self.n))
        if np.any(n1 <= 0) or np.any(n1 > n):
            raise ValueError("need 0 < n1 <= n")
        if not 0.0 <= self.Qf < 1.0:
            raise ValueError("Qf must lie in [0, 1)")
        if self.Q is not None and not 0.0 <= self.Q <= 1.0:
            raise ValueError("Q must lie in [0, 1]")
        q0, q1 = np.broadcast_arrays(np.asarray(self.q0, dtype=float),
                                     np.asarray(self.q1, dtype=float))
        if np.any(q0 <= 0) or np.any(q1 >= 1) or np.any(q0 >= q1):
            raise ValueError("need 0 < q0 < q1 < 1 for every indication")

    def arrays(self, I: int):
        return (_vec(self.n1, I, int), _vec(self.n, I, int),
                _vec(self.q0, I), _vec(self.q1, I))


@dataclass(frozen=True)
class LiuDesign:
    """Liu's two-path design; the Simon design defaults to the minimax one."""
    gamma: float = 0.2
    C: float = 0.5
    n1: object = 14
    n: object = 24
    Q: Optional[float] = None
    q0: object = 0.2
    q1: object = 0.4
    simon: Optional[SimonDesign] = None
    simon_alpha: float = 0.10
    simon_beta: float = 0.20

    def __post_init__(self):
        if not (0 < self.gamma < 1 and 0 < self.C < 1):
            raise ValueError("gamma and C must lie in (0, 1)")
        TwoStageDesign(self.n1, self.n, 0.0, self.Q, self.q0, self.q1)
        if self.simon is None:
            sd = simon_minimax(float(np.mean(self.q0)), float(np.mean(self.q1)),
                               self.simon_alpha, self.simon_beta)
            object.__setattr__(self, "simon", sd)

    def arrays(self, I: int):
        return TwoStageDesign(self.n1, self.n, 0.0, None, self.q0, self.q1).arrays(I)


@dataclass
class TrialBatch:
    """Outcome of ``B`` simulated trials; all arrays are ``(B, I)`` unless noted."""
    replicates: np.ndarray               # (B,)
    truth: np.ndarray                    # (I,)
    enrolled: np.ndarray
    responders: np.ndarray
    stopped: np.ndarray
    interim_prob: np.ndarray
    final_prob: np.ndarray
    estimate: np.ndarray
    path: np.ndarray                     # (B,)
    failed: np.ndarray                   # (B,)
    accept: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.replicates)

    def rejected(self, Q: float) -> np.ndarray:
        return (self.final_prob > Q) & ~self.stopped

    def subset(self, index) -> "TrialBatch":
        idx = np.asarray(index)
        pick = lambda a: a[idx]
        return TrialBatch(pick(self.replicates), self.truth, pick(self.enrolled),
                          pick(self.responders), pick(self.stopped), pick(self.interim_prob),
                          pick(self.final_prob), pick(self.estimate), pick(self.path),
                          pick(self.failed), self.accept)

    @staticmethod
    def concat(batches) -> "TrialBatch":
        batches = list(batches)
        cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
        return TrialBatch(cat("replicates"), batches[0].truth, cat("enrolled"),
                          cat("responders"), cat("stopped"), cat("interim_prob"),
                          cat("final_prob"), cat("estimate"), cat("path"), cat("failed"),
                          batches[0].accept)


@dataclass
class TrialResult:
    """One simulated trial, decisions taken at the design's final cutoff."""
    enrolled: np.ndarray
    responders: np.ndarray
    stopped_early: np.ndarray
    rejected_h0: np.ndarray
    interim_prob: np.ndarray
    final_prob: np.ndarray
    estimate: np.ndarray
    path: str

    def rows(self):
        for i in range(len(self.enrolled)):
            yield {"indication": i + 1, "enrolled": int(self.enrolled[i]),
                   "responders": int(self.responders[i]),
                   "stopped_early": bool(self.stopped_early[i]),
                   "rejected_h0": bool(self.rejected_h0[i]),
                   "interim_prob": float(self.interim_prob[i]),
                   "final_prob": float(self.final_prob[i]),
                   "estimate": float(self.estimate[i]), "path": self.path}


def generate_outcomes(truth, n_max: int, seed: int, replicates) -> np.ndarray:
    """Per-patient binary outcomes, shape ``(B, I, n_max)``.

    Patient ``j`` of indication ``i`` responds iff its uniform is below
    ``truth_i``; the uniforms depend only on ``(seed, replicate)``.
    """
    truth = np.asarray(truth, dtype=float)
    ids = [derive_stream_id(DATA_TAG, int(rep)) for rep in replicates]
    u = BatchRng(seed, ids).uniform((truth.size, n_max))
    return u < truth[None, :, None]


def _counts(outcomes, sizes):
    j = np.arange(outcomes.shape[-1])
    return np.sum(outcomes & (j[None, None, :] < np.asarray(sizes)[..., None]), axis=-1)


def _mcmc_rng(seed, method_index, replicates, stage):
    return BatchRng(seed, [derive_stream_id(MCMC_TAG, method_index, int(rep), stage)
                           for rep in replicates])


def simulate_two_stage(truth, spec, design: TwoStageDesign, cfg: McmcConfig = McmcConfig(),
                       seed: int = 0, replicates=range(1), method_index: int = 0) -> TrialBatch:
    """Simulate the posterior-probability two-stage design for a batch of replicates."""
    truth = np.asarray(truth, dtype=float)
    if np.any(truth <= 0) or np.any(truth >= 1):
        raise ValueError("true response rates must lie in (0, 1)")
    I = truth.size
    reps = np.asarray(list(replicates), dtype=np.int64)
    B = reps.size
    n1, n, q0, q1 = design.arrays(I)
    out = generate_outcomes(truth, int(n.max()), seed, reps)
    r1 = _counts(out, np.broadcast_to(n1, (B, I)))
    rn = _counts(out, np.broadcast_to(n, (B, I)))
    all_on = np.ones((B, I), dtype=bool)
    n1b = np.broadcast_to(n1, (B, I))
    stage1 = sample_batch(spec, n1b, r1, all_on, q0, q1, (q0 + q1) / 2.0, cfg,
                          _mcmc_rng(seed, method_index, reps, 1))
    stopped = stage1.prob_exceeds < design.Qf
    cont = ~stopped
    final_prob = np.full((B, I), -np.inf)
    estimate = stage1.post_mean.copy()
    failed = stage1.failed.copy()
    go = np.flatnonzero(cont.any(axis=1))
    accept = {"stage1": stage1.accept}
    if go.size:
        stage2 = sample_batch(spec, np.broadcast_to(n, (go.size, I)), rn[go], cont[go], q0, q1,
                              q0, cfg, _mcmc_rng(seed, method_index, reps[go], 2))
        fp = np.where(cont[go], stage2.prob_exceeds, -np.inf)
        final_prob[go] = fp
        estimate[go] = np.where(cont[go], stage2.post_mean, estimate[go])
        failed[go] |= stage2.failed
        accept["stage2"] = stage2.accept
    enrolled = np.where(stopped, n1b, n[None, :])
    responders = np.where(stopped, r1, rn)
    return TrialBatch(reps, truth, enrolled, responders, stopped, stage1.prob_exceeds,
                      final_prob, estimate, np.full(B, PATH_STANDARD), failed, accept)


def simulate_liu(truth, design: LiuDesign, cfg: McmcConfig = McmcConfig(), seed: int = 0,
                 replicates=range(1), method_index: int = 0,
                 spec: LiuSpec = LiuSpec()) -> TrialBatch:
    """Simulate Liu's two-path design for a batch of replicates."""
    truth = np.asarray(truth, dtype=float)
    if np.any(truth <= 0) or np.any(truth >= 1):
        raise ValueError("true response rates must lie in (0, 1)")
    I = truth.size
    if I < 2:
        raise ValueError("Liu's design needs at least two indications")
    reps = np.asarray(list(replicates), dtype=np.int64)
    B = reps.size
    n1, n, q0, q1 = design.arrays(I)
    sd = design.simon
    n_max = int(max(n.max(), sd.n))
    out = generate_outcomes(truth, n_max, seed, reps)
    n1b = np.broadcast_to(n1, (B, I))
    r1 = _counts(out, n1b)
    rn = _counts(out, np.broadcast_to(n, (B, I)))
    _, pval = cochran_q_arrays(n1b, r1)
    hetero = pval < design.gamma

    enrolled = np.zeros((B, I), dtype=int)
    responders = np.zeros((B, I), dtype=int)
    stopped = np.zeros((B, I), dtype=bool)
    interim = np.full((B, I), np.nan)
    final_prob = np.full((B, I), -np.inf)
    estimate = np.full((B, I), np.nan)
    failed = np.zeros(B, dtype=bool)
    accept = {}

    # heterogeneous path: Simon's rule per indication, no posterior computation
    h = np.flatnonzero(hetero)
    if h.size:
        s1 = _counts(out[h], np.full((h.size, I), sd.n1))
        sn = _counts(out[h], np.full((h.size, I), sd.n))
        go = s1 > sd.r1
        enrolled[h] = np.where(go, sd.n, sd.n1)
        responders[h] = np.where(go, sn, s1)
        stopped[h] = ~go
        final_prob[h] = np.where(go & (sn > sd.r), np.inf, -np.inf)
        estimate[h] = responders[h] / enrolled[h]

    # homogeneous path: predictive-power futility, then the mixture model on all data
    g = np.flatnonzero(~hetero)
    if g.size:
        pp = np.empty((g.size, I))
        for i in range(I):
            table = predictive_power_table(int(n1[i]), int(n[i] - n1[i]), float(q0[i]))
            pp[:, i] = table[r1[g, i]]
        stop = pp < design.C
        interim[g] = pp
        stopped[g] = stop
        enrolled[g] = np.where(stop, n1[None, :], n[None, :])
        responders[g] = np.where(stop, r1[g], rn[g])
        fit = sample_batch(spec, enrolled[g], responders[g], np.ones((g.size, I), dtype=bool),
                           q0, q1, q0, cfg, _mcmc_rng(seed, method_index, reps[g], 2))
        final_prob[g] = np.where(stop, -np.inf, fit.prob_exceeds)
        estimate[g] = fit.post_mean
        failed[g] = fit.failed
        accept["final"] = fit.accept
    path = np.where(hetero, PATH_HETEROGENEOUS, PATH_HOMOGENEOUS)
    return TrialBatch(reps, truth, enrolled, responders, stopped, interim, final_prob,
                      estimate, path, failed, accept)


_PATH_NAMES = {PATH_STANDARD: "two-stage", PATH_HOMOGENEOUS: "homogeneous",
               PATH_HETEROGENEOUS: "heterogeneous"}


def _single(batch: TrialBatch, Q) -> TrialResult:
    if Q is None:
        raise ValueError("the design needs a final cutoff Q to make decisions")
    if batch.failed[0]:
        raise ChainFailure("MCMC failed for this trial")
    return TrialResult(batch.enrolled[0], batch.responders[0], batch.stopped[0],
                       batch.rejected(Q)[0], batch.interim_prob[0], batch.final_prob[0],
                       batch.estimate[0], _PATH_NAMES[int(batch.path[0])])


def run_two_stage_trial(truth, method, design: TwoStageDesign, cfg: McmcConfig = McmcConfig(),
                        seed: int = 0, replicate: int = 0, method_index: int = 0) -> TrialResult:
    """Simulate one trial of the posterior-probability design."""
    return _single(simulate_two_stage(truth, method, design, cfg, seed, [replicate],
                                      method_index), design.Q)


def run_liu_trial(truth, design: LiuDesign, cfg: McmcConfig = McmcConfig(), seed: int = 0,
                  replicate: int = 0, method_index: int = 0,
                  spec: LiuSpec = LiuSpec()) -> TrialResult:
    """Simulate one trial of Liu's two-path design."""
    return _single(simulate_liu(truth, design, cfg, seed, [replicate], method_index, spec),
                   design.Q)
