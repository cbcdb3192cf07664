"""Special functions, beta-binomial conjugacy and the logit link.

The special functions are thin, validated wrappers around ``scipy.special``;
they accept scalars or arrays and broadcast like numpy ufuncs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError(f"beta shapes must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def var(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))


FLAT_PRIOR = BetaParams(1.0, 1.0)
JEFFREYS_PRIOR = BetaParams(0.5, 0.5)


def _scalar_or_array(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


# Stirling-series coefficients B_2k / (2k (2k - 1)), k = 1..8
_STIRLING = (1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0,
             -691.0 / 360360.0, 1.0 / 156.0, -3617.0 / 122400.0)
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_BIG = 8.0


def _stirling_corr(x):
    """ln Gamma(x) - [(x - 1/2) ln x - x + ln(2 pi) / 2] for x >= 8."""
    x = np.asarray(x, dtype=float)
    z = 1.0 / (x * x)
    acc = np.zeros_like(x)
    for c in reversed(_STIRLING):
        acc = acc * z + c
    return acc / x


def _betaln(a, b):
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    out = special.betaln(lo, hi)
    # hi large, lo small: ln Gamma(lo) + [ln Gamma(hi) - ln Gamma(lo + hi)] without cancellation
    m = (hi >= _BIG) & (lo < _BIG)
    if np.any(m):
        x, y = lo[m], hi[m]
        s = x + y
        diff = (-(y - 0.5) * np.log1p(x / y) - x * np.log(s) + x
                + (_stirling_corr(y) - _stirling_corr(s)))
        out[m] = special.gammaln(x) + diff
    # both large: Stirling for all three gamma functions, regrouped around ln(a + b)
    m = lo >= _BIG
    if np.any(m):
        x, y = lo[m], hi[m]
        s = x + y
        out[m] = (_HALF_LOG_2PI + (x - 0.5) * np.log(x / s) - (y - 0.5) * np.log1p(x / y)
                  - 0.5 * np.log(s) + _stirling_corr(x) + _stirling_corr(y) - _stirling_corr(s))
    return out


def log_beta_fn(a, b):
    """ln B(a, b) for positive a, b.

    ``scipy.special.betaln`` loses about five digits when one argument is
    large and the other small, so large arguments go through Stirling series
    with the ln Gamma differences regrouped around ``log1p``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise DomainError("log_beta_fn requires a > 0 and b > 0")
    a, b = np.broadcast_arrays(a, b)
    return _scalar_or_array(_betaln(np.atleast_1d(a), np.atleast_1d(b)).reshape(a.shape))


def digamma(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("digamma is only used on positive arguments")
    return _scalar_or_array(special.psi(x))


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("logit requires 0 < p < 1")
    return _scalar_or_array(special.logit(p))


def inv_logit(x):
    return _scalar_or_array(special.expit(np.asarray(x, dtype=float)))


def beta_posterior(n: int, r: float, prior: BetaParams = FLAT_PRIOR) -> BetaParams:
    """Conjugate update of a beta prior with ``r`` responders out of ``n``."""
    if n < 0 or r < 0:
        raise ValueError(f"counts must be non-negative, got n={n}, r={r}")
    if r > n:
        raise ValueError(f"responders ({r}) exceed patients ({n})")
    return BetaParams(prior.alpha + r, prior.beta + n - r)


def beta_tail_prob(params: BetaParams, threshold):
    """Pr(X > threshold) for X ~ Beta(params)."""
    t = np.asarray(threshold, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("threshold must lie in [0, 1]")
    return _scalar_or_array(special.betaincc(params.alpha, params.beta, t))
