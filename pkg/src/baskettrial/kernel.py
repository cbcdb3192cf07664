"""Correlation functions over posterior distances, and tie-breaking of the data."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

logger = logging.getLogger(__name__)


class CorrelationKind(enum.Enum):
    EXPONENTIAL = "exp"
    SQUARED_EXPONENTIAL = "sqexp"

    @classmethod
    def parse(cls, value) -> "CorrelationKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"exp": "exp", "exponential": "exp",
                   "sqexp": "sqexp", "squared_exponential": "sqexp", "gaussian": "sqexp"}
        if key not in aliases:
            raise ValueError(f"unknown correlation function {value!r}")
        return cls(aliases[key])


@dataclass(frozen=True)
class CorrelationFn:
    kind: CorrelationKind
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "kind", CorrelationKind.parse(self.kind))
        if not self.phi > 0:
            raise ValueError(f"range parameter must be positive, got {self.phi}")

    def __call__(self, d):
        return correlation_values(self.kind, self.phi, d)


def correlation_values(kind, phi, d):
    """rho(d | phi); ``phi`` and ``d`` broadcast (phi may carry a batch axis)."""
    d = np.asarray(d, dtype=float)
    if CorrelationKind.parse(kind) is CorrelationKind.EXPONENTIAL:
        return np.exp(-phi * d)
    return np.exp(-phi * d * d)


def correlation(fn: CorrelationFn, d: float) -> float:
    if d < 0:
        raise ValueError("distance must be non-negative")
    return float(correlation_values(fn.kind, fn.phi, d))


def build_corr_matrix(dist, fn: CorrelationFn) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.shape[-1] != dist.shape[-2]:
        raise ValueError("distance matrix must be square")
    R = correlation_values(fn.kind, fn.phi, dist)
    idx = np.arange(dist.shape[-1])
    R[..., idx, idx] = 1.0
    return 0.5 * (R + np.swapaxes(R, -1, -2))


@dataclass
class TieBreakLog:
    epsilon: float
    groups: list
    clamped: list


def preprocess_ties(n, r, q0, q1, return_log: bool = False):
    """Separate indications whose sample response rates coincide.

    Each group of ``k >= 2`` indications with equal ``r/n`` gets responder
    counts ``r + eps * j`` for ``j = 1..k`` (in index order), where
    ``eps = 3 * (q1 - q0) / I``. Per-indication rates use their mean difference.
    A shifted count that would exceed ``n`` is placed just below ``n`` at
    ``n - (eps / 10) * j`` instead, keeping the group distinct.
    """
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    I = n.shape[-1]
    if I < 2:
        raise ValueError("tie-breaking needs at least two indications")
    gap = float(np.mean(np.asarray(q1, dtype=float) - np.asarray(q0, dtype=float)))
    eps = 3.0 * gap / I
    out = r.copy()
    groups, clamped = [], []
    rates = [Fraction(r[i]).limit_denominator(10**9) / Fraction(n[i]).limit_denominator(10**9)
             if n[i] > 0 else None for i in range(I)]
    seen = set()
    n_clamped = 0
    for i in range(I):
        if i in seen or rates[i] is None:
            continue
        members = [j for j in range(i, I) if rates[j] == rates[i]]
        seen.update(members)
        if len(members) < 2:
            continue
        groups.append(members)
        for k, j in enumerate(members, start=1):
            shifted = r[j] + eps * k
            if shifted >= n[j]:
                n_clamped += 1
                shifted = n[j] - (eps / 10.0) * n_clamped
                clamped.append(j)
            out[j] = shifted
    if clamped:
        logger.info("tie-break clamped indications %s below their sample size", clamped)
    if return_log:
        return out, TieBreakLog(eps, groups, clamped)
    return out


def preprocess_ties_batch(n, r, active, q0, q1):
    """Vectorised tie-breaking for ``(B, I)`` arrays; inactive columns are ignored.

    Counts are integers here, so ties are detected on ``r_i * n_j == r_j * n_i``.
    """
    n = np.asarray(n)
    r = np.asarray(r)
    active = np.asarray(active, dtype=bool)
    B, I = n.shape
    k_active = active.sum(axis=1)
    gap = float(np.mean(np.asarray(q1, dtype=float) - np.asarray(q0, dtype=float)))
    eps = np.where(k_active > 0, 3.0 * gap / np.maximum(k_active, 1), 0.0)
    out = r.astype(float).copy()
    same = (r[:, :, None] * n[:, None, :] == r[:, None, :] * n[:, :, None])
    same &= active[:, :, None] & active[:, None, :]
    # position of each indication within its tie group (1-based, index order)
    lower = np.tril(np.ones((I, I), dtype=bool))
    rank = np.sum(same & lower[None, :, :], axis=2)
    group_size = same.sum(axis=2)
    tied = (group_size >= 2) & active
    if not tied.any():
        return out
    shifted = out + eps[:, None] * rank
    over = tied & (shifted >= n)
    if over.any():
        over_rank = np.cumsum(over, axis=1)
        shifted = np.where(over, n - (eps[:, None] / 10.0) * over_rank, shifted)
    return np.where(tied, shifted, out)
