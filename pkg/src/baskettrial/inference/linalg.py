"""Cholesky with a fixed jitter schedule, and multivariate normal densities."""

from __future__ import annotations

import numpy as np

from ..errors import SingularCovariance

JITTER_SCHEDULE = (1e-10, 1e-8, 1e-6)
_LOG_2PI = np.log(2.0 * np.pi)


def jitter_cholesky(A, schedule=JITTER_SCHEDULE, return_jitter=False):
    """Lower Cholesky factor of ``A``; retries with ``jit * mean(diag(A))`` added.

    With ``return_jitter`` the diagonal amount actually added is returned too.
    Raises SingularCovariance once the schedule is exhausted.
    """
    A = np.asarray(A, dtype=float)
    try:
        L = np.linalg.cholesky(A)
        return (L, 0.0) if return_jitter else L
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(A)))
    eye = np.eye(A.shape[0])
    for jit in schedule:
        try:
            L = np.linalg.cholesky(A + jit * scale * eye)
            return (L, jit * scale) if return_jitter else L
        except np.linalg.LinAlgError:
            continue
    raise SingularCovariance(f"matrix not positive definite after jitter {schedule[-1]:g}")


def batch_cholesky(A, schedule=JITTER_SCHEDULE, return_matrix=False):
    """Cholesky of a ``(B, n, n)`` stack; returns ``(L, ok)``.

    Matrices that fail even with the largest jitter get an identity factor
    and ``ok = False``; the caller must treat them as rejected. With
    ``return_matrix`` the factored matrices (jitter included) come third.
    """
    try:
        L = np.linalg.cholesky(A)
        ok = np.ones(A.shape[0], dtype=bool)
        return (L, ok, A) if return_matrix else (L, ok)
    except np.linalg.LinAlgError:
        pass
    L = np.empty_like(A)
    A_eff = np.array(A, dtype=float, copy=True)
    ok = np.ones(A.shape[0], dtype=bool)
    eye = np.eye(A.shape[-1])
    for b in range(A.shape[0]):
        try:
            L[b], jit = jitter_cholesky(A[b], schedule, return_jitter=True)
            A_eff[b] += jit * eye
        except SingularCovariance:
            L[b] = eye
            A_eff[b] = eye
            ok[b] = False
    return (L, ok, A_eff) if return_matrix else (L, ok)


def forward_solve(L, y):
    """Solve ``L x = y`` for a batch of lower-triangular ``L`` (``(B, n, n)``, ``(B, n)``)."""
    n = L.shape[-1]
    x = np.empty_like(y)
    for k in range(n):
        acc = y[:, k]
        if k:
            acc = acc - np.einsum("bj,bj->b", L[:, k, :k], x[:, :k])
        x[:, k] = acc / L[:, k, k]
    return x


def mvn_logpdf_chol(e, L):
    """Batched log N(e; 0, L L^T) for residuals ``e`` of shape ``(B, n)``."""
    z = forward_solve(L, e)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    n = e.shape[-1]
    return -0.5 * (n * _LOG_2PI + logdet + np.sum(z * z, axis=-1))


def mvn_logpdf(x, mean, cov, schedule=JITTER_SCHEDULE) -> float:
    """Log density of a multivariate normal via Cholesky factorisation."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.broadcast_to(np.asarray(mean, dtype=float), x.shape)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (x.size, x.size):
        raise ValueError("covariance shape does not match x")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
        raise ValueError("covariance must be symmetric")
    L = jitter_cholesky(cov, schedule)
    return float(mvn_logpdf_chol((x - mean)[None, :], L[None, :, :])[0])
