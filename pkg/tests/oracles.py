"""Independent reference computations used by the tests."""
import numpy as np


def projected_gradient_dispatch(q, r, total, iters=200000, tol=1e-12):
    """Minimize sum(q p^2 + r p) on the hyperplane sum(p) = total by projected gradient."""
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    n = q.size
    p = np.full(n, total / n)
    step = 1.0 / (2.0 * q.max())
    for _ in range(iters):
        g = 2.0 * q * p + r
        g -= g.mean()
        p -= step * g
        if np.abs(g).max() < tol:
            break
    return p


def consensus_limit(lap, mu, lam_loc):
    """Consensus output for small mu via the Laplacian pseudo-inverse expansion.

    ``mu (mu I + L)^-1 = 11^T/m + mu L^+ + O(mu^2)`` on a connected graph.
    """
    lap = np.asarray(lap, dtype=float)
    m = lap.shape[0]
    avg = np.full(m, np.mean(lam_loc))
    return avg + mu * np.linalg.pinv(lap) @ np.asarray(lam_loc, dtype=float)
