"""Bayesian predictive power used for futility stopping."""

from __future__ import annotations

import numpy as np
from scipy import special

from ..rng import RngStream

PRIOR_SHIFT = 0.5


def _predictive_pmf(n1, r1, n2):
    """Beta-binomial mass of stage-2 responders ``0..n2`` given stage-1 data."""
    a = r1 + PRIOR_SHIFT
    b = n1 - r1 + PRIOR_SHIFT
    k = np.arange(n2 + 1)
    log_pmf = (special.gammaln(n2 + 1) - special.gammaln(k + 1) - special.gammaln(n2 - k + 1)
               + special.betaln(a + k, b + n2 - k) - special.betaln(a, b))
    pmf = np.exp(log_pmf)
    return pmf / pmf.sum()             # exact 1 when every outcome qualifies


def predictive_power(n1: int, r1: int, n2: int, n: int, q0: float, draws: int = 0,
                     rng: RngStream = None) -> float:
    """Probability that the final response rate ``(r1 + r2) / n`` exceeds ``q0``.

    Stage-2 responders follow the posterior predictive of a binomial with a
    ``Beta(r1 + 0.5, n1 - r1 + 0.5)`` posterior. ``draws = 0`` sums the
    beta-binomial mass exactly; otherwise ``draws`` Monte Carlo samples are used.
    """
    if n != n1 + n2:
        raise ValueError("n must equal n1 + n2")
    if not 0 <= r1 <= n1:
        raise ValueError("need 0 <= r1 <= n1")
    if draws == 0:
        pmf = _predictive_pmf(n1, r1, n2)
        ok = (r1 + np.arange(n2 + 1)) / n > q0
        return float(np.clip(np.sum(pmf[ok]), 0.0, 1.0))
    rng = rng if rng is not None else RngStream(0)
    p = rng.beta(r1 + PRIOR_SHIFT, n1 - r1 + PRIOR_SHIFT, draws)
    u = rng.uniform((draws, n2)) if n2 > 0 else np.zeros((draws, 0))
    r2 = np.sum(u < p[:, None], axis=1)
    return float(np.mean((r1 + r2) / n > q0))


def predictive_power_table(n1: int, n2: int, q0: float) -> np.ndarray:
    """Exact predictive power for every ``r1 = 0..n1``."""
    return np.array([predictive_power(n1, r1, n2, n1 + n2, q0) for r1 in range(n1 + 1)])
