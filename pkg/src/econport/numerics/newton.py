"""Damped Newton iteration for square nonlinear systems."""
from __future__ import annotations

import numpy as np


class NewtonError(RuntimeError):
    def __init__(self, message: str, residual: float, x: np.ndarray):
        super().__init__(f"{message}; residual {residual:.3e}")
        self.residual = residual
        self.x = x


def newton_solve(F, J, x0, tol: float = 1e-9, max_iter: int = 100, fixed=None, weights=None):
    """Solve ``F(x) = 0`` with backtracking Newton steps.

    ``fixed`` lists indices whose rows and columns are excluded (those
    components keep their initial value and their residual is ignored).
    ``weights`` scales residual rows before the max-norm test.
    Singular Jacobians fall back to a least-squares step.
    """
    x = np.array(x0, dtype=float)
    free = np.ones(x.size, dtype=bool)
    if fixed is not None:
        free[np.asarray(fixed, dtype=int)] = False

    w = np.ones(x.size) if weights is None else np.asarray(weights, dtype=float)

    def norm(r):
        return np.abs(w[free] * r[free]).max() if free.any() else 0.0

    r = F(x)
    res = norm(r)
    for _ in range(max_iter):
        if res < tol:
            return x
        jac = J(x)[np.ix_(free, free)]
        rhs = -r[free]
        try:
            dx = np.linalg.solve(jac, rhs)
            if not np.all(np.isfinite(dx)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(jac, rhs, rcond=None)[0]
        step = 1.0
        while True:
            trial = x.copy()
            trial[free] += step * dx
            try:
                r_new = F(trial)
                res_new = norm(r_new)
            except (ValueError, ArithmeticError):
                res_new = np.inf
            if res_new < res or step < 1e-6:
                break
            step *= 0.5
        if not np.isfinite(res_new):
            raise NewtonError("Newton step left the admissible region", res, x)
        x, r, res = trial, r_new, res_new
    if res < tol:
        return x
    raise NewtonError(f"no convergence in {max_iter} iterations", res, x)
