"""Proportional dynamic consensus over the microgrids' economic ports.

    w' = -(mu I + L) w - L lam_loc
    lam_glob = w + lam_loc
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def path_laplacian(m: int, weight: float = 1.0) -> np.ndarray:
    lap = np.zeros((m, m))
    for k in range(m - 1):
        lap[k, k] += weight
        lap[k + 1, k + 1] += weight
        lap[k, k + 1] -= weight
        lap[k + 1, k] -= weight
    return lap


def check_laplacian(lap: np.ndarray, tol: float = 1e-12) -> None:
    lap = np.asarray(lap, dtype=float)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
        raise ValueError("Laplacian must be square")
    scale = max(1.0, np.abs(lap).max())
    if np.abs(lap - lap.T).max() > tol * scale:
        raise ValueError("Laplacian must be symmetric")
    if np.abs(lap.sum(axis=1)).max() > tol * scale:
        raise ValueError("Laplacian rows must sum to zero")
    off = lap - np.diag(np.diag(lap))
    if np.any(off > tol * scale):
        raise ValueError("Laplacian off-diagonal entries must be non-positive")
    m = lap.shape[0]
    seen = {0}
    stack = [0]
    while stack:
        k = stack.pop()
        for j in np.nonzero(off[k] < 0)[0]:
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    if len(seen) != m:
        raise ValueError("communication graph must be connected")


@dataclass(frozen=True)
class ConsensusState:
    w: np.ndarray
    laplacian: np.ndarray
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        check_laplacian(self.laplacian)
        if np.shape(self.w) != (self.laplacian.shape[0],):
            raise ValueError("w does not match the Laplacian size")


def _check(state: ConsensusState, lam_loc) -> np.ndarray:
    lam_loc = np.asarray(lam_loc, dtype=float)
    if lam_loc.shape != state.w.shape:
        raise ValueError(f"expected {state.w.shape[0]} local prices, got {lam_loc.shape}")
    return lam_loc


def consensus_derivative(state: ConsensusState, lam_loc) -> np.ndarray:
    lam_loc = _check(state, lam_loc)
    lap = state.laplacian
    return -(state.mu * state.w + lap @ state.w) - lap @ lam_loc


def consensus_output(state: ConsensusState, lam_loc) -> np.ndarray:
    return state.w + _check(state, lam_loc)


def steady_state(laplacian, mu: float, lam_loc):
    """Equilibrium ``(w, lam_glob)`` for a constant input."""
    lap = np.asarray(laplacian, dtype=float)
    lam_loc = np.asarray(lam_loc, dtype=float)
    w = np.linalg.solve(mu * np.eye(len(lam_loc)) + lap, -lap @ lam_loc)
    return w, w + lam_loc
