import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from econport.numerics import (
    AsymmetricMatrixError,
    Event,
    IntegrationError,
    IntegratorConfig,
    NewtonError,
    eig_sym,
    integrate,
    newton_solve,
)


def decay(t, x):
    return -x


@pytest.mark.parametrize("method", ["rk4", "rk45"])
def test_exponential_decay(method):
    cfg = IntegratorConfig(method=method, horizon=1.0, dt=1e-3, rtol=1e-10, atol=1e-12)
    tr = integrate(decay, [1.0], cfg)
    assert tr.t[-1] == pytest.approx(1.0)
    assert abs(tr.x[-1, 0] - math.exp(-1.0)) < 1e-8


def test_harmonic_energy_drift():
    def osc(t, x):
        return np.array([x[1], -x[0]])

    cfg = IntegratorConfig(horizon=100 * 2 * math.pi, rtol=1e-10, atol=1e-12, dt_max=0.1)
    tr = integrate(osc, [1.0, 0.0], cfg)
    energy = 0.5 * (tr.x[-1] ** 2).sum()
    assert abs(energy - 0.5) / 0.5 < 1e-6


def test_rl_line_closed_form():
    r, ind, v = 0.5, 2e-3, 10.0

    def rl(t, x):
        return np.array([(v - r * x[0]) / ind])

    cfg = IntegratorConfig(horizon=0.02, sample_dt=1e-3, rtol=1e-10, atol=1e-12)
    tr = integrate(rl, [0.0], cfg)
    exact = v / r * (1 - np.exp(-r / ind * tr.t))
    assert np.abs(tr.x[:, 0] - exact).max() < 1e-7


def test_rk4_fourth_order():
    def f(t, x):
        return np.array([x[0] * math.cos(t)])

    exact = math.exp(math.sin(2.0))
    errs = []
    for dt in (0.02, 0.01):
        tr = integrate(f, [1.0], IntegratorConfig(method="rk4", horizon=2.0, dt=dt))
        errs.append(abs(tr.x[-1, 0] - exact))
    assert 14.0 < errs[0] / errs[1] < 18.0


def test_events_fire_at_their_timestamps():
    seen = []

    def kick(x):
        seen.append(x.copy())
        return x + 1.0

    cfg = IntegratorConfig(horizon=1.0, sample_dt=0.1)
    tr = integrate(lambda t, x: np.zeros(1), [0.0], cfg, events=[Event(0.35, kick)])
    k = tr.event_indices[0]
    assert tr.t[k] == 0.35 and tr.t[k - 1] == 0.35
    assert tr.x[k - 1, 0] == 0.0 and tr.x[k, 0] == 1.0
    assert tr.x[-1, 0] == 1.0
    assert len(seen) == 1


def test_sample_grid():
    tr = integrate(decay, [1.0], IntegratorConfig(horizon=1.0, sample_dt=0.25))
    assert np.allclose(tr.t, [0, 0.25, 0.5, 0.75, 1.0])


def test_nan_aborts():
    def bad(t, x):
        return np.array([np.nan]) if t > 0.1 else -x

    with pytest.raises(IntegrationError):
        integrate(bad, [1.0], IntegratorConfig(horizon=1.0))


def test_step_underflow_aborts():
    def stiff(t, x):
        return np.array([1.0 / (0.5 - t) ** 2])

    with pytest.raises(IntegrationError):
        integrate(stiff, [0.0], IntegratorConfig(horizon=1.0, dt_min=1e-9))


def test_nonfinite_initial_state():
    with pytest.raises(IntegrationError):
        integrate(decay, [np.inf], IntegratorConfig())


@pytest.mark.parametrize("kwargs", [{"method": "euler"}, {"dt": 0.0}, {"rtol": -1.0}, {"horizon": 0.0}, {"dt_min": 1.0, "dt_max": 0.1}])
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        IntegratorConfig(**kwargs)


# ---------------------------------------------------------------------------
# eigenvalues


def test_eig_diagonal():
    assert np.allclose(eig_sym(np.diag([3.0, -1.0, 2.0])), [-1.0, 2.0, 3.0])


def test_eig_two_by_two():
    w = eig_sym([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(w, [1.0, 3.0], atol=1e-14)


def test_eig_tiny_entries():
    a = 4.5e-252
    w, v = eig_sym([[a, a], [a, a]], vectors=True)
    assert w[0] == 0.0 and w[1] == pytest.approx(2 * a)


def test_eig_zero_matrix():
    assert np.array_equal(eig_sym(np.zeros((3, 3))), np.zeros(3))


def test_eig_rejects_asymmetric():
    with pytest.raises(AsymmetricMatrixError):
        eig_sym([[1.0, 2.0], [0.0, 1.0]])


def test_eig_rejects_rectangular():
    with pytest.raises(ValueError):
        eig_sym(np.zeros((2, 3)))


def symmetric(n):
    return arrays(np.float64, (n, n), elements=st.floats(-1e3, 1e3)).map(lambda a: (a + a.T) / 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8).flatmap(symmetric))
def test_eig_residual_and_invariants(m):
    w, v = eig_sym(m, vectors=True)
    mx = np.abs(m).max()
    # Frobenius norm without underflow for tiny entries
    scale = np.linalg.norm(m / mx) * mx if mx > 0 else 0.0
    assert np.abs(m @ v - v * w).max() <= 1e-9 * scale
    assert np.allclose(v.T @ v, np.eye(len(w)), atol=1e-10)
    assert abs(w.sum() - np.trace(m)) <= 1e-9 * scale
    assert np.all(np.diff(w) >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6).flatmap(symmetric))
def test_eig_matches_lapack(m):
    ref = np.linalg.eigvalsh(m)
    assert np.allclose(eig_sym(m), ref, rtol=0, atol=1e-9 * max(1e-300, np.abs(m).max() * len(m)))


def test_eig_determinant():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((5, 5))
    m = a + a.T
    assert np.prod(eig_sym(m)) == pytest.approx(np.linalg.det(m), rel=1e-9)


# ---------------------------------------------------------------------------
# Newton


def test_newton_square_root():
    x = newton_solve(lambda x: x**2 - 2.0, lambda x: np.diag(2 * x), [1.0], tol=1e-14)
    assert x[0] == pytest.approx(math.sqrt(2.0), rel=1e-14)


def test_newton_fixed_components():
    def F(x):
        return np.array([x[0] - 3.0, x[1] - x[0] * 2])

    def J(x):
        return np.array([[1.0, 0.0], [-2.0, 1.0]])

    x = newton_solve(F, J, [5.0, 0.0], fixed=[0])
    assert x[0] == 5.0 and x[1] == pytest.approx(10.0)


def test_newton_reports_failure():
    with pytest.raises(NewtonError) as info:
        newton_solve(lambda x: x**2 + 1.0, lambda x: np.diag(2 * x), [1.0], max_iter=20)
    assert info.value.residual > 0
