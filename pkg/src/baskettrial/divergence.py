"""Distances between the beta posteriors of two indications.

Each indication ``(n, r)`` has posterior ``Beta(a + r, b + n - r)`` under a
``Beta(a, b)`` prior (flat by default). Responder counts may be real-valued,
which happens after tie-breaking in :mod:`baskettrial.kernel`.

All closed forms broadcast over array arguments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .errors import NumericalError
from .stats import FLAT_PRIOR, BetaParams


class DistanceMeasure(enum.Enum):
    BHATTACHARYYA = "b"
    HELLINGER = "h"
    SYMMETRIZED_KL = "kl"

    @classmethod
    def parse(cls, value) -> "DistanceMeasure":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"b": "b", "bhattacharyya": "b", "h": "h", "hellinger": "h",
                   "kl": "kl", "symmetrizedkl": "kl", "symmetrized_kl": "kl"}
        if key not in aliases:
            raise ValueError(f"unknown distance measure {value!r}")
        return cls(aliases[key])


@dataclass(frozen=True)
class IndicationData:
    n: float
    r: float

    def __post_init__(self):
        if not (0 <= self.r <= self.n):
            raise ValueError(f"need 0 <= r <= n, got n={self.n}, r={self.r}")


def _shapes(n, r, prior):
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    return prior.alpha + r, prior.beta + n - r


def _unpack(d):
    if isinstance(d, IndicationData):
        return d.n, d.r
    return d


def b_distance_arrays(ni, ri, nj, rj, prior: BetaParams = FLAT_PRIOR):
    """Bhattacharyya distance for array inputs."""
    ai, bi = _shapes(ni, ri, prior)
    aj, bj = _shapes(nj, rj, prior)
    log_bc = special.betaln((ai + aj) / 2.0, (bi + bj) / 2.0) - 0.5 * (
        special.betaln(ai, bi) + special.betaln(aj, bj))
    return np.maximum(-log_bc, 0.0)


def h_distance_arrays(ni, ri, nj, rj, prior: BetaParams = FLAT_PRIOR):
    bd = b_distance_arrays(ni, ri, nj, rj, prior)
    return np.sqrt(-np.expm1(-bd))


def _kl_beta(a1, b1, a2, b2):
    return (special.betaln(a2, b2) - special.betaln(a1, b1)
            + (a1 - a2) * special.psi(a1) + (b1 - b2) * special.psi(b1)
            + (a2 - a1 + b2 - b1) * special.psi(a1 + b1))


def kl_distance_arrays(ni, ri, nj, rj, prior: BetaParams = FLAT_PRIOR):
    ai, bi = _shapes(ni, ri, prior)
    aj, bj = _shapes(nj, rj, prior)
    return np.maximum(0.5 * (_kl_beta(ai, bi, aj, bj) + _kl_beta(aj, bj, ai, bi)), 0.0)


_ARRAY_FNS = {
    DistanceMeasure.BHATTACHARYYA: b_distance_arrays,
    DistanceMeasure.HELLINGER: h_distance_arrays,
    DistanceMeasure.SYMMETRIZED_KL: kl_distance_arrays,
}


def distance_arrays(measure, ni, ri, nj, rj, prior: BetaParams = FLAT_PRIOR):
    return _ARRAY_FNS[DistanceMeasure.parse(measure)](ni, ri, nj, rj, prior)


def b_distance(di, dj, prior: BetaParams = FLAT_PRIOR) -> float:
    return float(b_distance_arrays(*_unpack(di), *_unpack(dj), prior))


def h_distance(di, dj, prior: BetaParams = FLAT_PRIOR) -> float:
    return float(h_distance_arrays(*_unpack(di), *_unpack(dj), prior))


def kl_distance(di, dj, prior: BetaParams = FLAT_PRIOR) -> float:
    return float(kl_distance_arrays(*_unpack(di), *_unpack(dj), prior))


def distance(measure, di, dj, prior: BetaParams = FLAT_PRIOR) -> float:
    return float(distance_arrays(measure, *_unpack(di), *_unpack(dj), prior))


def distance_matrix(measure, n, r, prior: BetaParams = FLAT_PRIOR) -> np.ndarray:
    """Pairwise distances among the trailing-axis indications of ``n``, ``r``.

    ``n`` and ``r`` have shape ``(..., I)``; the result has shape ``(..., I, I)``.
    """
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    d = distance_arrays(measure, n[..., :, None], r[..., :, None],
                        n[..., None, :], r[..., None, :], prior)
    idx = np.arange(n.shape[-1])
    d[..., idx, idx] = 0.0
    return d


# -- quadrature oracle -------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = leggauss(5)


def _smoothstep(t):
    # quintic smoothstep: S(1 - t) = 1 - S(t), S'(0) = S'(1) = S''(0) = S''(1) = 0
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _open_grid(grid_points: int):
    """Nodes/weights on (0, 1) in the p variable, plus log p and log(1 - p)."""
    panels = max(1, int(np.ceil(grid_points / len(_GL_NODES))))
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    wt = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    jac = 30.0 * t * t * (1.0 - t) * (1.0 - t)
    p = _smoothstep(t)
    q = _smoothstep(1.0 - t)
    keep = (p > 0) & (q > 0) & (jac > 0)
    return np.log(p[keep]), np.log(q[keep]), (wt * jac)[keep]


def _log_beta_pdf(a, b, logp, logq):
    return (a - 1.0) * logp + (b - 1.0) * logq - special.betaln(a, b)


def numeric_distance_oracle(measure, di, dj, grid_points: int = 20000,
                            prior: BetaParams = FLAT_PRIOR) -> float:
    """Evaluate the defining integral of a distance by quadrature.

    Uses a composite 5-point Gauss-Legendre rule (an open rule, so the
    endpoints are never evaluated) after the substitution p = S(t), where S
    is the quintic smoothstep; the substitution flattens endpoint
    singularities of the log densities.
    """
    if grid_points < 10_000:
        raise ValueError("grid_points must be at least 1e4")
    measure = DistanceMeasure.parse(measure)
    ni, ri = _unpack(di)
    nj, rj = _unpack(dj)
    ai, bi = _shapes(ni, ri, prior)
    aj, bj = _shapes(nj, rj, prior)
    logp, logq, w = _open_grid(grid_points)
    lfi = _log_beta_pdf(ai, bi, logp, logq)
    lfj = _log_beta_pdf(aj, bj, logp, logq)
    with np.errstate(over="ignore", invalid="ignore"):
        if measure is DistanceMeasure.SYMMETRIZED_KL:
            integrand = 0.5 * (np.exp(lfi) - np.exp(lfj)) * (lfi - lfj)
            value = float(np.sum(w * integrand))
        elif measure is DistanceMeasure.BHATTACHARYYA:
            bc = float(np.sum(w * np.exp(0.5 * (lfi + lfj))))
            if not np.isfinite(bc):
                raise NumericalError("non-finite Bhattacharyya coefficient")
            value = max(-np.log(bc), 0.0)
        else:
            # 1 - BC = (1/2) * integral of (sqrt f_i - sqrt f_j)^2, free of cancellation
            gap = np.exp(0.5 * lfi) - np.exp(0.5 * lfj)
            value = float(np.sqrt(0.5 * np.sum(w * gap * gap)))
    if not np.isfinite(value):
        raise NumericalError(f"non-finite accumulation for {measure.name}")
    return value
