"""Quadratic generation costs, the closed-form dispatch, and controller residuals.

Prices follow the marginal-cost convention: at an optimum every follower
satisfies ``2 q p + r = lam``, so prices are positive for positive output.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class QuadraticCost:
    q: float
    r: float = 0.0
    s: float = 0.0

    def __post_init__(self):
        if not np.isfinite([self.q, self.r, self.s]).all():
            raise ValueError("cost coefficients must be finite")

    def __call__(self, p):
        return self.q * p**2 + self.r * p + self.s


def gradient(cost: QuadraticCost, p):
    """Marginal cost ``2 q p + r``."""
    return 2.0 * cost.q * p + cost.r


def dispatch_oracle(costs: Sequence[QuadraticCost], total: float):
    """Closed-form solution of the equality-constrained quadratic dispatch.

    Returns ``(p, lam)`` with ``2 q_i p_i + r_i = lam`` for every unit and
    ``sum(p) = total``.
    """
    if len(costs) == 0:
        raise ValueError("dispatch needs at least one cost")
    q = np.array([c.q for c in costs], dtype=float)
    r = np.array([c.r for c in costs], dtype=float)
    if np.any(q <= 0):
        raise ValueError("all quadratic coefficients must be positive")
    w = 1.0 / (2.0 * q)
    lam = (total + np.sum(r * w)) / np.sum(w)
    p = (lam - r) * w
    return p, float(lam)


def marginal_cost_residual(spec, x, lam=None):
    """``2 q_i p_ref_i + r_i - lam`` for every follower of ``spec`` at state ``x``.

    ``lam`` defaults to the local price stored in ``x``; pass the external
    price when the economic port is connected.
    """
    from .model import layout

    view = layout(spec).unpack(x)
    costs = [spec.nodes[k].cost for k in spec.follower_nodes]
    q = np.array([c.q for c in costs])
    r = np.array([c.r for c in costs])
    price = view.lam if lam is None else lam
    return 2.0 * q * view.p_ref + r - price
