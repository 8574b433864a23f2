"""Cyclic Jacobi eigenvalue decomposition for real symmetric matrices."""
from __future__ import annotations

import math

import numpy as np


class AsymmetricMatrixError(ValueError):
    pass


def eig_sym(m, vectors: bool = False, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigenvalues (ascending) of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps continue until the off-diagonal Frobenius norm drops below
    ``tol * ||m||_F``. With ``vectors=True`` returns ``(w, v)`` where the
    columns of ``v`` are the matching orthonormal eigenvectors.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    n = a.shape[0]
    scale = np.abs(a).max() if a.size else 0.0
    if a.size and np.abs(a - a.T).max() > 1e-12 * max(1.0, scale):
        raise AsymmetricMatrixError("matrix is not symmetric within 1e-12")
    a = 0.5 * (a + a.T)
    # unit max entry keeps the Frobenius norms clear of under/overflow
    if scale > 0:
        a /= scale
    v = np.eye(n)
    norm = np.linalg.norm(a)
    target = tol * norm

    def off_norm():
        return np.linalg.norm(a - np.diag(np.diag(a)))

    sweeps = 0
    while n > 1 and off_norm() > target:
        if sweeps == max_sweeps:
            raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps")
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                if vectors:
                    vp = v[:, p].copy()
                    v[:, p] = c * vp - s * v[:, q]
                    v[:, q] = s * vp + c * v[:, q]

    w = np.diag(a) * scale if scale > 0 else np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    if vectors:
        return w[order], v[:, order]
    return w[order]
