"""Cochran's Q test for homogeneity of binomial proportions."""

from __future__ import annotations

import numpy as np
from scipy import stats

from ..divergence import IndicationData


def cochran_q_arrays(n, r):
    """Statistic and upper-tail p-value along the last axis of ``(..., I)`` arrays.

    Uses inverse-variance weights ``n_i / (pbar (1 - pbar))`` with the pooled
    rate ``pbar``, which keeps groups with 0 or ``n_i`` responders usable.
    A pooled rate of exactly 0 or 1 gives statistic 0 and p-value 1.
    """
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    I = n.shape[-1]
    pbar = r.sum(axis=-1) / n.sum(axis=-1)
    var = pbar * (1.0 - pbar)
    phat = r / n
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.sum(n * (phat - pbar[..., None]) ** 2, axis=-1) / var
    q = np.where(var > 0, q, 0.0)
    pval = np.where(var > 0, stats.chi2.sf(q, I - 1), 1.0)
    return q, pval


def cochran_q(data):
    """``(statistic, p_value)`` for a sequence of IndicationData or ``(n, r)`` pairs."""
    rows = [(d.n, d.r) if isinstance(d, IndicationData) else tuple(d) for d in data]
    if len(rows) < 2:
        raise ValueError("Cochran's Q needs at least two indications")
    n, r = (np.array(v, dtype=float) for v in zip(*rows))
    if np.any(n <= 0) or np.any(r < 0) or np.any(r > n):
        raise ValueError("each indication needs n > 0 and 0 <= r <= n")
    q, p = cochran_q_arrays(n, r)
    return float(q), float(p)
