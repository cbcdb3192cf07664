"""Scenario runner and operating-characteristics tables."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calibration import simulate_batches
from .designs.trials import LiuDesign, TrialBatch, TwoStageDesign
from .errors import ConfigError
from .inference.mcmc import McmcConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MethodConfig:
    """A method in a scenario: the model spec plus its final cutoff.

    ``design`` is ``"two-stage"`` (the posterior-probability design) or
    ``"liu"`` (the two-path design, for which ``spec`` must be a LiuSpec).
    """
    label: str
    spec: object
    Q: Optional[float] = None
    design: str = "two-stage"


@dataclass(frozen=True)
class ScenarioConfig:
    truth: tuple
    methods: tuple
    q0: object = 0.2
    q1: object = 0.4
    n1: object = 14
    n: object = 24
    Qf: float = 0.05
    gamma: float = 0.2
    C: float = 0.5
    replicates: int = 1000
    mcmc: McmcConfig = McmcConfig()
    seed: int = 0
    name: str = "scenario"
    threads: int = 1
    batch_size: int = 2000

    def __post_init__(self):
        truth = np.asarray(self.truth, dtype=float)
        if truth.ndim != 1 or truth.size < 1:
            raise ConfigError("truth must be a non-empty vector")
        if np.any(truth <= 0) or np.any(truth >= 1):
            raise ConfigError("true response rates must lie in (0, 1)")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate method labels {labels}")

    @property
    def n_indications(self) -> int:
        return len(self.truth)

    def design_for(self, method: MethodConfig, Q=None):
        if method.design == "liu":
            return LiuDesign(self.gamma, self.C, self.n1, self.n, Q, self.q0, self.q1)
        return TwoStageDesign(self.n1, self.n, self.Qf, Q, self.q0, self.q1)

    def sensitive(self) -> np.ndarray:
        q0 = np.broadcast_to(np.asarray(self.q0, dtype=float), (self.n_indications,))
        return np.asarray(self.truth) > q0


@dataclass
class OperatingCharacteristics:
    label: str
    reject_pct: np.ndarray
    stop_pct: np.ndarray
    sample_size: float
    perfect_pct: float
    mean_tp: float
    mean_tn: float
    abs_bias: np.ndarray
    rmse: np.ndarray
    n_replicates: int
    n_failed: int
    Q: float
    batch: Optional[TrialBatch] = field(default=None, repr=False)


def summarize(batch: TrialBatch, Q: float, sensitive, label: str = "") -> OperatingCharacteristics:
    """Aggregate a batch of trials into operating characteristics.

    Failed replicates are excluded and counted. Replicates are reduced with
    order-independent means, so the result does not depend on batch order.
    """
    ok = ~batch.failed
    good = batch.subset(np.flatnonzero(ok))
    sensitive = np.asarray(sensitive, dtype=bool)
    R = good.size
    if R == 0:
        nan = np.full(len(sensitive), np.nan)
        return OperatingCharacteristics(label, nan, nan, np.nan, np.nan, np.nan, np.nan,
                                        nan, nan, 0, int(batch.failed.sum()), Q, batch)
    rej = good.rejected(Q)
    correct = np.where(sensitive[None, :], rej, ~rej)
    err = good.estimate - batch.truth[None, :]
    return OperatingCharacteristics(
        label=label,
        reject_pct=100.0 * rej.mean(axis=0),
        stop_pct=100.0 * good.stopped.mean(axis=0),
        sample_size=float(good.enrolled.sum(axis=1).mean()),
        perfect_pct=100.0 * float(correct.all(axis=1).mean()),
        mean_tp=float((rej & sensitive[None, :]).sum(axis=1).mean()),
        mean_tn=float((~rej & ~sensitive[None, :]).sum(axis=1).mean()),
        abs_bias=np.abs(err.mean(axis=0)),
        rmse=np.sqrt((err ** 2).mean(axis=0)),
        n_replicates=R,
        n_failed=int(batch.failed.sum()),
        Q=float(Q),
        batch=batch,
    )


def _simulate_chunk(args):
    spec, design, truth, reps, cfg, seed, index = args
    return simulate_batches(spec, design, truth, len(reps), cfg, seed, index,
                            batch_size=len(reps), start=reps[0])


def simulate_method(scn: ScenarioConfig, method: MethodConfig, index: int,
                    replicates: Optional[int] = None, truth=None, start: int = 0) -> TrialBatch:
    """All replicates of one method; split over worker processes if ``threads > 1``."""
    R = scn.replicates if replicates is None else replicates
    truth = np.asarray(scn.truth if truth is None else truth, dtype=float)
    design = scn.design_for(method)
    if scn.threads <= 1:
        return simulate_batches(method.spec, design, truth, R, scn.mcmc, scn.seed, index,
                                scn.batch_size, start)
    chunk = max(1, min(scn.batch_size, -(-R // scn.threads)))
    jobs = [(method.spec, design, truth, list(range(lo, min(lo + chunk, start + R))),
             scn.mcmc, scn.seed, index) for lo in range(start, start + R, chunk)]
    with ProcessPoolExecutor(max_workers=scn.threads) as pool:
        parts = list(pool.map(_simulate_chunk, jobs))
    return TrialBatch.concat(parts)


def run_scenario(scn: ScenarioConfig, cutoffs: Optional[dict] = None) -> dict:
    """Operating characteristics for every method of a scenario.

    ``cutoffs`` maps method labels to calibrated ``Q``; a method's own ``Q``
    is used otherwise. A method with neither raises ConfigError.
    """
    cutoffs = dict(cutoffs or {})
    out = {}
    for index, method in enumerate(scn.methods):
        Q = cutoffs.get(method.label, method.Q)
        if Q is None:
            raise ConfigError(f"no calibrated cutoff Q for method {method.label!r}")
        batch = simulate_method(scn, method, index)
        oc = summarize(batch, Q, scn.sensitive(), method.label)
        if oc.n_failed:
            logger.warning("%s: %d of %d replicates failed and were dropped",
                           method.label, oc.n_failed, batch.size)
        out[method.label] = oc
    return out


def _fmt(x, digits=1):
    return "" if x is None or not np.isfinite(x) else f"{x:.{digits}f}"


TABLE_HEADER = ["Scenario", "Method", "Metric"]


def oc_rows(scenario: str, results: dict):
    """Rows in the layout of the published tables: method x metric by indication."""
    I = len(next(iter(results.values())).reject_pct)
    header = TABLE_HEADER + [f"Ind {i + 1}" for i in range(I)] + [
        "Sample Size", "% Perfect", "# TP", "# TN", "Q", "Replicates", "Failed"]
    rows = [header]
    for label, oc in results.items():
        rows.append([scenario, label, "% reject"] + [_fmt(v) for v in oc.reject_pct]
                    + [_fmt(oc.sample_size), _fmt(oc.perfect_pct), _fmt(oc.mean_tp, 2),
                       _fmt(oc.mean_tn, 2), _fmt(oc.Q, 4), str(oc.n_replicates), str(oc.n_failed)])
        rows.append([scenario, label, "% stop"] + [_fmt(v) for v in oc.stop_pct]
                    + [""] * 7)
        rows.append([scenario, label, "abs bias"] + [_fmt(v, 3) for v in oc.abs_bias]
                    + [""] * 7)
        rows.append([scenario, label, "RMSE"] + [_fmt(v, 3) for v in oc.rmse] + [""] * 7)
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def compare_methods(scenarios) -> str:
    """Side-by-side CSV for runs of the same scenario.

    ``scenarios`` is a sequence of ``(ScenarioConfig, results)`` pairs; all must
    share truth, rates and design, otherwise ConfigError is raised.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise ConfigError("nothing to compare")
    ref = scenarios[0][0]
    merged = {}
    for scn, res in scenarios:
        if not _same_scenario(ref, scn):
            raise ConfigError(f"scenario {scn.name!r} does not match {ref.name!r}")
        for label, oc in res.items():
            if label in merged:
                raise ConfigError(f"method label {label!r} appears twice")
            merged[label] = oc
    return to_csv(oc_rows(ref.name, merged))


def _same_scenario(a: ScenarioConfig, b: ScenarioConfig) -> bool:
    keys = ("truth", "q0", "q1", "n1", "n", "Qf")
    return all(np.array_equal(np.asarray(getattr(a, k)), np.asarray(getattr(b, k))) for k in keys)


def long_rows(results: dict):
    """Per-replicate, per-indication records for downstream plotting."""
    rows = [["method", "replicate", "indication", "truth", "enrolled", "responders",
             "stopped", "rejected", "final_prob", "estimate", "failed"]]
    for label, oc in results.items():
        b = oc.batch
        rej = b.rejected(oc.Q)
        for k in range(b.size):
            for i in range(len(b.truth)):
                rows.append([label, int(b.replicates[k]), i + 1, f"{b.truth[i]:g}",
                             int(b.enrolled[k, i]), int(b.responders[k, i]),
                             int(b.stopped[k, i]), int(rej[k, i]), f"{b.final_prob[k, i]:.6g}",
                             f"{b.estimate[k, i]:.6g}", int(b.failed[k])])
    return rows
