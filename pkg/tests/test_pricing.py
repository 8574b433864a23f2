import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from econport.pricing import QuadraticCost, dispatch_oracle, gradient, marginal_cost_residual
from oracles import projected_gradient_dispatch

costs_st = st.lists(
    st.builds(QuadraticCost, st.floats(0.05, 10.0), st.floats(-50.0, 50.0), st.floats(-10.0, 10.0)),
    min_size=1,
    max_size=8,
)


def test_equal_costs_split_evenly():
    p, lam = dispatch_oracle([QuadraticCost(1.4)] * 4, 8000.0)
    assert np.allclose(p, 2000.0)
    assert lam == pytest.approx(2 * 1.4 * 2000.0)


def test_zero_total():
    p, lam = dispatch_oracle([QuadraticCost(1.2), QuadraticCost(1.3)], 0.0)
    assert np.allclose(p, 0.0) and lam == 0.0


def test_single_unit():
    p, lam = dispatch_oracle([QuadraticCost(2.0, 3.0)], 10.0)
    assert p[0] == 10.0 and lam == 43.0


def test_reference_microgrid_price(mg1):
    costs = [mg1.nodes[k].cost for k in mg1.follower_nodes]
    _, lam = dispatch_oracle(costs, 16000.0)
    assert lam == pytest.approx(13811.8577, abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(costs_st, st.floats(-1e5, 1e5))
def test_kkt(costs, total):
    p, lam = dispatch_oracle(costs, total)
    grads = np.array([gradient(c, pk) for c, pk in zip(costs, p)])
    scale = max(abs(lam), abs(total), 1.0)
    assert np.abs(grads - lam).max() <= 1e-10 * scale
    assert abs(p.sum() - total) <= 1e-10 * scale


@settings(max_examples=20, deadline=None)
@given(costs_st, st.floats(-1e4, 1e4))
def test_matches_projected_gradient(costs, total):
    p, _ = dispatch_oracle(costs, total)
    ref = projected_gradient_dispatch([c.q for c in costs], [c.r for c in costs], total)
    assert np.abs(p - ref).max() <= 1e-6 * max(1.0, np.abs(ref).max())


@settings(max_examples=50, deadline=None)
@given(costs_st, st.floats(-1e4, 1e4), st.floats(-100.0, 100.0))
def test_optimality_against_feasible_moves(costs, total, delta):
    p, _ = dispatch_oracle(costs, total)
    total_cost = sum(c(pk) for c, pk in zip(costs, p))
    if len(costs) > 1:
        moved = p.copy()
        moved[0] += delta
        moved[1] -= delta
        assert sum(c(pk) for c, pk in zip(costs, moved)) >= total_cost - 1e-9 * max(1.0, abs(total_cost))


@pytest.mark.parametrize("costs", [[], [QuadraticCost(0.0)], [QuadraticCost(1.0), QuadraticCost(-1.0)]])
def test_dispatch_rejects(costs):
    with pytest.raises(ValueError):
        dispatch_oracle(costs, 1.0)


def test_cost_must_be_finite():
    with pytest.raises(ValueError):
        QuadraticCost(np.nan)


def test_residual_zero_at_dispatch(mg2):
    from econport.model import layout

    lay = layout(mg2)
    costs = [mg2.nodes[k].cost for k in mg2.follower_nodes]
    p, lam = dispatch_oracle(costs, 5000.0)
    x = np.zeros(lay.dim)
    x[lay["p_ref"]] = p
    x[lay["lam"]] = lam
    assert np.abs(marginal_cost_residual(mg2, x)).max() < 1e-9
    assert np.allclose(marginal_cost_residual(mg2, x, lam + 1.0), -1.0)
