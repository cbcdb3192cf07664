"""Simon's two-stage single-arm design, found by exact enumeration.

Convention used throughout: continue to stage 2 iff stage-1 responders
``x1 > r1``; reject the null iff total responders ``> r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..errors import InfeasibleDesign


@dataclass(frozen=True)
class SimonDesign:
    r1: int
    n1: int
    r: int
    n: int

    def __post_init__(self):
        if not (0 <= self.r1 <= self.n1 <= self.n and self.r1 <= self.r <= self.n):
            raise ValueError(f"invalid Simon design {self}")

    def reject_prob(self, p: float) -> float:
        return simon_reject_prob(self.r1, self.n1, self.r, self.n, p)

    def early_stop_prob(self, p: float) -> float:
        return float(stats.binom.cdf(self.r1, self.n1, p))

    def expected_n(self, p: float) -> float:
        pet = self.early_stop_prob(p)
        return self.n1 + (1.0 - pet) * (self.n - self.n1)


def simon_reject_prob(r1: int, n1: int, r: int, n: int, p: float) -> float:
    """Exact probability that ``x1 > r1`` and ``x1 + x2 > r``."""
    x1 = np.arange(r1 + 1, n1 + 1)
    f1 = stats.binom.pmf(x1, n1, p)
    # need x2 > r - x1, i.e. x2 >= r - x1 + 1
    tail = stats.binom.sf(r - x1, n - n1, p)
    return float(np.sum(f1 * tail))


def simon_minimax(q0: float, q1: float, alpha: float, beta: float, n_max: int = 100) -> SimonDesign:
    """Minimax design: smallest maximum size ``n``, ties broken by expected size under q0.

    Every ``(r1, n1, r)`` with ``1 <= n1 < n`` is checked exactly for each
    ``n`` in increasing order; the first ``n`` with a feasible design wins.
    """
    if not 0 < q0 < q1 < 1:
        raise ValueError("need 0 < q0 < q1 < 1")
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("alpha and beta must lie in (0, 1)")
    for n in range(2, n_max + 1):
        best = None
        for n1 in range(1, n):
            n2 = n - n1
            x1 = np.arange(n1 + 1)
            f0 = stats.binom.pmf(x1, n1, q0)
            f1 = stats.binom.pmf(x1, n1, q1)
            cdf0 = np.cumsum(f0)
            # tail[x1, r] = P(x2 > r - x1) for each r in 0..n
            r_grid = np.arange(n + 1)
            k = r_grid[None, :] - x1[:, None]
            sf0 = stats.binom.sf(k, n2, q0)
            sf1 = stats.binom.sf(k, n2, q1)
            # cumulative over x1 from the top: sum_{x1 > r1} f(x1) * sf(r - x1)
            c0 = np.cumsum((f0[:, None] * sf0)[::-1], axis=0)[::-1]
            c1 = np.cumsum((f1[:, None] * sf1)[::-1], axis=0)[::-1]
            for r1 in range(0, n1):
                a_err = c0[r1 + 1]
                power = c1[r1 + 1]
                ok = (a_err <= alpha) & (power >= 1.0 - beta) & (r_grid >= r1)
                if not ok.any():
                    continue
                r = int(np.argmax(ok))
                en0 = n1 + (1.0 - cdf0[r1]) * n2
                if best is None or en0 < best[0] - 1e-12:
                    best = (en0, SimonDesign(r1, n1, r, n))
        if best is not None:
            return best[1]
    raise InfeasibleDesign(f"no design with n <= {n_max} meets alpha={alpha}, beta={beta}")
