import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from econport.consensus import (
    ConsensusState,
    check_laplacian,
    consensus_derivative,
    consensus_output,
    path_laplacian,
    steady_state,
)
from oracles import consensus_limit


def test_path_laplacian():
    lap = path_laplacian(3, 2.0)
    assert np.array_equal(lap, [[2, -2, 0], [-2, 4, -2], [0, -2, 2]])
    check_laplacian(lap)


@pytest.mark.parametrize(
    "lap, fragment",
    [
        ([[1.0, -1.0], [0.0, 0.0]], "symmetric"),
        ([[1.0, 0.0], [0.0, 1.0]], "sum to zero"),
        ([[-1.0, 1.0], [1.0, -1.0]], "non-positive"),
        (np.zeros((3, 3)), "connected"),
    ],
)
def test_laplacian_rejects(lap, fragment):
    with pytest.raises(ValueError, match=fragment):
        check_laplacian(np.array(lap))


def test_state_checks():
    with pytest.raises(ValueError):
        ConsensusState(np.zeros(2), path_laplacian(2), 0.0)
    with pytest.raises(ValueError):
        ConsensusState(np.zeros(3), path_laplacian(2), 0.1)
    st_ = ConsensusState(np.zeros(2), path_laplacian(2), 0.1)
    with pytest.raises(ValueError):
        consensus_output(st_, [1.0])


def test_identical_prices_need_no_correction():
    lap = path_laplacian(3)
    w, glob = steady_state(lap, 0.1, [5.0, 5.0, 5.0])
    assert np.allclose(w, 0.0) and np.allclose(glob, 5.0)


def test_single_microgrid_passthrough():
    lap = np.zeros((1, 1))
    w, glob = steady_state(lap, 0.1, [7.0])
    assert w[0] == 0.0 and glob[0] == 7.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.floats(1e-3, 10.0), st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6))
def test_steady_state_is_rest_point(m, mu, prices):
    lap = path_laplacian(m)
    lam = np.array(prices[:m])
    w, glob = steady_state(lap, mu, lam)
    state = ConsensusState(w, lap, mu)
    assert np.abs(consensus_derivative(state, lam)).max() < 1e-9 * max(1.0, np.abs(lam).max())
    assert np.allclose(glob, mu * np.linalg.solve(mu * np.eye(m) + lap, lam))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=5))
def test_limit_law_error_shrinks_linearly(m, prices):
    lap = path_laplacian(m)
    lam = np.array(prices[:m])
    spread = np.ptp(lam)
    errs = []
    for mu in (1e-1, 1e-2, 1e-3):
        _, glob = steady_state(lap, mu, lam)
        errs.append(np.abs(glob - lam.mean()).max())
    if spread > 1.0:
        assert 8.0 <= errs[0] / errs[1] <= 12.0
        assert 8.0 <= errs[1] / errs[2] <= 12.0


def test_limit_matches_pseudo_inverse_expansion():
    lap = path_laplacian(4, 3.0)
    lam = np.array([10.0, -4.0, 2.5, 7.0])
    _, glob = steady_state(lap, 1e-4, lam)
    assert np.abs(glob - consensus_limit(lap, 1e-4, lam)).max() < 1e-6


def test_trajectory_converges():
    from econport.numerics import IntegratorConfig, integrate

    lap = path_laplacian(3)
    mu = 0.5
    lam = np.array([1.0, 2.0, 6.0])

    def f(t, w):
        return consensus_derivative(ConsensusState(w, lap, mu), lam)

    tr = integrate(f, np.zeros(3), IntegratorConfig(horizon=40.0, rtol=1e-10, atol=1e-12))
    w_ss, _ = steady_state(lap, mu, lam)
    assert np.abs(tr.x[-1] - w_ss).max() < 1e-7
