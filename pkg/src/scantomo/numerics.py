"""Small dense linear algebra used throughout the package.

Composite (two-arm) indices follow the arm-A-major convention
``index = a * d_b + b``, the same layout ``np.kron`` produces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class ConvergenceError(RuntimeError):
    pass


class RankDeficientError(np.linalg.LinAlgError):
    """Least-squares system without full column rank.

    ``null_vector`` is a unit vector (in original column order) spanning the
    numerically weakest direction of the design.
    """

    def __init__(self, rank: int, n: int, null_vector: np.ndarray, message: str | None = None):
        self.rank = rank
        self.n = n
        self.null_vector = null_vector
        super().__init__(message or f"design has rank {rank} < {n} columns")


def hermitize(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    return 0.5 * (h + h.conj().T)


def hermitian_eig(h: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decompose a small Hermitian matrix with cyclic complex Jacobi rotations.

    Returns ``(w, v)`` with ``w`` ascending and the columns of ``v``
    orthonormal eigenvectors, so that ``v @ diag(w) @ v.conj().T == h``.
    """
    a = hermitize(h).copy()
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    v = np.eye(n, dtype=complex)
    scale = np.linalg.norm(a)
    if n < 2 or scale == 0.0:
        w = a.diagonal().real.copy()
        order = np.argsort(w)
        return w[order], v[:, order]

    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offdiag])
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-300 or mag <= 1e-3 * tol * scale:
                    continue
                phase = apq / mag
                app, aqq = a[p, p].real, a[q, q].real
                theta = (aqq - app) / (2.0 * mag)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # G = diag(1, e^{-i phase}) on (p, q) followed by the real rotation
                col_p = a[:, p].copy()
                col_q = a[:, q] * np.conj(phase)
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :] * phase
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                vp = v[:, p].copy()
                vq = v[:, q] * np.conj(phase)
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    w = a.diagonal().real.copy()
    order = np.argsort(w)
    return w[order], v[:, order]


def psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = hermitian_eig(rho)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


@dataclass(frozen=True)
class LstsqResult:
    x: np.ndarray
    rank: int
    condition: float
    rss: float
    singular_values: np.ndarray


def lsq_solve(a: np.ndarray, y: np.ndarray, rcond: float | None = None) -> LstsqResult:
    """Minimise ``||a @ x - y||^2`` through a column-pivoted QR factorisation.

    Raises :class:`RankDeficientError` when the numerical rank is below the
    column count.  The condition number is that of ``a`` (from the singular
    values of the triangular factor).
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = a.shape
    if m < n:
        raise ValueError(f"underdetermined system: {m} rows < {n} columns")
    if y.shape != (m,):
        raise ValueError(f"right-hand side has shape {y.shape}, expected ({m},)")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in least-squares system")

    q, r, perm = scipy.linalg.qr(a, mode="economic", pivoting=True)
    _, sv, vh = np.linalg.svd(r)
    if rcond is None:
        rcond = max(m, n) * np.finfo(float).eps
    rank = int(np.sum(sv > rcond * sv[0])) if sv[0] > 0 else 0
    condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if rank < n:
        null = np.zeros(n)
        null[perm] = vh[-1]
        raise RankDeficientError(rank, n, null)

    z = scipy.linalg.solve_triangular(r, q.T @ y)
    x = np.empty(n)
    x[perm] = z
    resid = a @ x - y
    return LstsqResult(x=x, rank=rank, condition=condition, rss=float(resid @ resid),
                       singular_values=sv)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b)


def partial_trace_b(c: np.ndarray, d_a: int, d_b: int | None = None) -> np.ndarray:
    """Trace out the second (minor-index) subsystem of a ``(d_a*d_b)``-square matrix."""
    if d_b is None:
        d_b = d_a
    c = np.asarray(c)
    if c.shape != (d_a * d_b, d_a * d_b):
        raise ValueError(f"matrix of shape {c.shape} is not ({d_a}*{d_b}) square")
    return np.einsum("ajbj->ab", c.reshape(d_a, d_b, d_a, d_b))


def partial_trace_a(c: np.ndarray, d_a: int, d_b: int | None = None) -> np.ndarray:
    if d_b is None:
        d_b = d_a
    c = np.asarray(c)
    if c.shape != (d_a * d_b, d_a * d_b):
        raise ValueError(f"matrix of shape {c.shape} is not ({d_a}*{d_b}) square")
    return np.einsum("jajb->ab", c.reshape(d_a, d_b, d_a, d_b))
