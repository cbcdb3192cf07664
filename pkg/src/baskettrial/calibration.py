"""Calibration of the CBHM range prior and of the final decision cutoff."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .designs.trials import LiuDesign, TrialBatch, simulate_liu, simulate_two_stage
from .divergence import DistanceMeasure, distance_arrays
from .errors import CalibrationError
from .inference.mcmc import McmcConfig
from .kernel import CorrelationKind
from .rng import BatchRng, derive_stream_id

logger = logging.getLogger(__name__)

PHI_TAG = 3

# documented prior means for the range parameter with the exponential kernel
PINNED_PHI_SHAPE = {
    (DistanceMeasure.BHATTACHARYYA, CorrelationKind.EXPONENTIAL): 1.0,
    (DistanceMeasure.HELLINGER, CorrelationKind.EXPONENTIAL): 1.5,
}


@dataclass(frozen=True)
class PhiPriorCalib:
    M: int = 5000
    alpha_q: float = 0.05
    rho_lb: float = 0.3
    rho_ub: float = 0.5
    measure: DistanceMeasure = DistanceMeasure.BHATTACHARYYA
    corr: CorrelationKind = CorrelationKind.EXPONENTIAL
    n: tuple = (24,) * 6
    q0: object = 0.2
    q1: object = 0.4
    a_override: Optional[float] = None
    draw_a: bool = False

    def __post_init__(self):
        object.__setattr__(self, "measure", DistanceMeasure.parse(self.measure))
        object.__setattr__(self, "corr", CorrelationKind.parse(self.corr))
        if not 0 < self.rho_lb <= self.rho_ub < 1:
            raise ValueError("need 0 < rho_lb <= rho_ub < 1")
        if self.M < 1000:
            raise ValueError("M must be at least 1000")
        if not 0 < self.alpha_q < 1:
            raise ValueError("alpha_q must lie in (0, 1)")
        if len(self.n) < 2:
            raise ValueError("need at least two indications")


@dataclass(frozen=True)
class PhiPriorResult:
    d_t: float
    a_lb: float
    a_ub: float
    a: float


def simulate_pair_distances(calib: PhiPriorCalib, seed: int = 0) -> np.ndarray:
    """Sample distances for every pair ``i < j`` under both homogeneous scenarios.

    Returns an array of shape ``(2, n_pairs, M)``: scenario (all at q0, all at
    q1), pair, simulation. No tie-breaking is applied; equal rates give 0.
    """
    n = np.asarray(calib.n, dtype=int)
    I = n.size
    q0 = np.broadcast_to(np.asarray(calib.q0, dtype=float), (I,))
    q1 = np.broadcast_to(np.asarray(calib.q1, dtype=float), (I,))
    pairs = [(i, j) for i in range(I) for j in range(i + 1, I)]
    out = np.empty((2, len(pairs), calib.M))
    n_max = int(n.max())
    k = np.arange(n_max)
    for s, rates in enumerate((q0, q1)):
        ids, pr, nn = _pair_streams(s, pairs, n, rates)
        u = BatchRng(seed, ids).uniform((calib.M, 2, n_max))
        hit = (u < pr[:, None, :, None]) & (k[None, None, None, :] < nn[:, None, :, None])
        r = hit.sum(axis=-1)                                    # (P, M, 2)
        out[s] = distance_arrays(calib.measure, nn[:, None, 0], r[..., 0],
                                 nn[:, None, 1], r[..., 1])
    return out


def _pair_streams(scenario, pairs, n, rates):
    """Stream ids keyed by pair content, so relabelling indications permutes nothing.

    Each pair is put in canonical order (smaller ``(n, rate)`` first) and its
    stream is derived from that content plus an occurrence count among pairs
    with the same content; the pooled set of distances is therefore invariant
    to the order of the indications.
    """
    seen = {}
    ids, pr, nn = [], [], []
    for i, j in pairs:
        a, b = sorted([(int(n[i]), float(rates[i])), (int(n[j]), float(rates[j]))])
        key = (a, b)
        occ = seen.get(key, 0)
        seen[key] = occ + 1
        ids.append(derive_stream_id(PHI_TAG, scenario, a[0], round(a[1] * 1e9), b[0],
                                    round(b[1] * 1e9), occ))
        pr.append((a[1], b[1]))
        nn.append((a[0], b[0]))
    return ids, np.array(pr), np.array(nn)


def phi_interval(d_t: float, rho_lb: float, rho_ub: float, corr=CorrelationKind.EXPONENTIAL):
    """Range values giving correlation ``rho_ub`` and ``rho_lb`` at distance ``d_t``."""
    scale = d_t if CorrelationKind.parse(corr) is CorrelationKind.EXPONENTIAL else d_t * d_t
    return -np.log(rho_ub) / scale, -np.log(rho_lb) / scale


def calibrate_phi_prior(calib: PhiPriorCalib = PhiPriorCalib(), seed: int = 0) -> PhiPriorResult:
    """Distance threshold, interval for the gamma shape ``a``, and the chosen ``a``.

    ``a`` is the override if given, a uniform draw from the interval when
    ``draw_a`` is set, the documented value for B and H distances with the
    exponential kernel, and the interval midpoint otherwise.
    """
    d = simulate_pair_distances(calib, seed)
    if not np.any(d > 0):
        raise CalibrationError("all simulated distances are zero", achieved=0.0)
    d_t = float(np.quantile(d.ravel(), 1.0 - calib.alpha_q))  # type-7 (linear) quantile
    if d_t <= 0:
        raise CalibrationError("distance quantile is zero; increase sample sizes or alpha_q",
                               achieved=d_t)
    a_lb, a_ub = phi_interval(d_t, calib.rho_lb, calib.rho_ub, calib.corr)
    if calib.a_override is not None:
        a = float(calib.a_override)
    elif calib.draw_a:
        u = BatchRng(seed, [derive_stream_id(PHI_TAG, 99)]).uniform()[0]
        a = float(a_lb + (a_ub - a_lb) * u)
    else:
        a = PINNED_PHI_SHAPE.get((calib.measure, calib.corr), 0.5 * (a_lb + a_ub))
    return PhiPriorResult(d_t, float(a_lb), float(a_ub), float(a))


# -- final cutoff ------------------------------------------------------------

@dataclass(frozen=True)
class CutoffCalib:
    alpha: float = 0.10
    replicates: int = 2000
    tolerance: float = 0.001
    target: str = "mean"      # "mean" or "max" per-indication rejection rate

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.target not in ("mean", "max"):
            raise ValueError("target must be 'mean' or 'max'")


@dataclass
class CutoffResult:
    Q: float
    achieved: np.ndarray          # per-indication rejection rate at Q
    n_used: int
    n_failed: int
    batch: Optional[TrialBatch] = field(default=None, repr=False)


def _smallest_admissible(values: np.ndarray, k: int) -> float:
    """Smallest Q with at most ``k`` of ``values`` strictly above it."""
    if k >= values.size:
        return 0.0
    v = np.sort(values)[::-1]
    return max(float(v[k]), 0.0)


def cutoff_from_probs(final_prob, alpha: float, target: str = "mean") -> float:
    """Exact smallest cutoff controlling the rejection rate on cached replicates.

    ``final_prob`` is ``(R, I)``: each indication's final exceedance
    probability, ``-inf`` where it can never be rejected and ``+inf`` where it
    is rejected regardless of Q. Rejection is ``final_prob > Q``.
    """
    fp = np.asarray(final_prob, dtype=float)
    R, I = fp.shape
    if alpha >= 1.0:
        return 0.0
    if target == "mean":
        k = int(np.floor(alpha * R * I + 1e-9))
        Q = _smallest_admissible(fp.ravel(), k)
    else:
        k = int(np.floor(alpha * R + 1e-9))
        Q = max(_smallest_admissible(fp[:, i], k) for i in range(I))
    rates = np.mean(fp > Q, axis=0)
    achieved = rates.mean() if target == "mean" else rates.max()
    if not np.isfinite(Q) or Q >= 1.0:
        raise CalibrationError(f"no cutoff in (0, 1) keeps the rejection rate at {alpha}",
                               achieved=float(np.mean(fp > 1.0, axis=0).max()))
    assert achieved <= alpha + 1e-12, "cutoff search violated monotonicity"
    return Q


def calibrate_final_cutoff(method, design, calib: CutoffCalib = CutoffCalib(),
                           cfg: McmcConfig = McmcConfig(), seed: int = 0,
                           method_index: int = 0, n_indications: int = 6,
                           batch_size: int = 2000) -> CutoffResult:
    """Simulate the global null and return the smallest admissible cutoff ``Q``.

    ``method`` is a model spec; with a :class:`LiuDesign` the spec is used for
    the mixture-model fit (pass ``None`` for its defaults). Failed replicates
    are dropped and counted.
    """
    batch = simulate_null(method, design, n_indications, calib.replicates, cfg, seed,
                          method_index, batch_size)
    ok = ~batch.failed
    fp = batch.final_prob[ok]
    if fp.shape[0] == 0:
        raise CalibrationError("every null replicate failed", achieved=float("nan"))
    Q = cutoff_from_probs(fp, calib.alpha, calib.target)
    achieved = np.mean(fp > Q, axis=0)
    logger.info("calibrated Q=%.4f, null rejection %s", Q, np.round(achieved, 4))
    return CutoffResult(Q, achieved, int(ok.sum()), int((~ok).sum()), batch)


def simulate_null(method, design, n_indications: int, replicates: int, cfg: McmcConfig,
                  seed: int, method_index: int = 0, batch_size: int = 2000) -> TrialBatch:
    """Replicates of the trial with every response rate at its null value."""
    q0 = np.broadcast_to(np.asarray(design.q0, dtype=float), (n_indications,))
    return simulate_batches(method, design, q0, replicates, cfg, seed, method_index, batch_size)


def simulate_batches(method, design, truth, replicates: int, cfg: McmcConfig, seed: int,
                     method_index: int = 0, batch_size: int = 2000, start: int = 0) -> TrialBatch:
    """Simulate replicates ``start .. start + replicates - 1`` in chunks."""
    parts = []
    for lo in range(start, start + replicates, batch_size):
        reps = range(lo, min(lo + batch_size, start + replicates))
        if isinstance(design, LiuDesign):
            kw = {"spec": method} if method is not None else {}
            parts.append(simulate_liu(truth, design, cfg, seed, reps, method_index, **kw))
        else:
            parts.append(simulate_two_stage(truth, method, design, cfg, seed, reps, method_index))
    return TrialBatch.concat(parts)
