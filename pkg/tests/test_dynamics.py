import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from econport.dynamics import (
    Envelope,
    NoEquilibriumError,
    SingularLoadError,
    affine_factorization,
    cpl_interval,
    equilibrium_solve,
    interval_mul,
    model,
    parameter_values,
    port_matrices,
    shifted_matrix,
    vector_field,
    zip_current,
)
from econport.config import load_scenario
from econport.model import ZipLoad, layout
from econport.pricing import dispatch_oracle


def shipped(name):
    from conftest import CONFIGS

    if name == "reduced":
        return load_scenario(CONFIGS / "reduced.json").network.microgrids[0]
    return load_scenario(CONFIGS / "scenario.json").network.microgrids[{"mg1": 0, "mg2": 1}[name]]


def losses_and_load(spec, x):
    lay = layout(spec)
    s = lay.unpack(x)
    load = sum(nd.load.y * v * v + nd.load.p + nd.load.i_hat * v for nd, v in zip(spec.nodes, s.v))
    losses = sum(ln.r_pi * i * i for ln, i in zip(spec.lines, s.i_pi))
    return load, losses


def random_state(spec, rng, v_lo=900.0, v_hi=1100.0):
    lay = layout(spec)
    x = rng.uniform(-20.0, 20.0, lay.dim)
    x[lay["v"]] = rng.uniform(v_lo, v_hi, spec.n)
    x[lay["p_ref"]] = rng.uniform(0.0, 5000.0, spec.d - 1)
    x[lay["lam"]] = rng.uniform(0.0, 2e4)
    return x


def test_zip_current():
    assert zip_current(500.0, ZipLoad(0.01, 1000.0, 2.0)) == pytest.approx(5.0 + 2.0 + 2.0)
    with pytest.raises(SingularLoadError):
        zip_current(0.5, ZipLoad(p=10.0))
    assert zip_current(0.5, ZipLoad(y=1.0)) == 0.5


@pytest.mark.parametrize("name", ["mg1", "mg2", "reduced"])
def test_equilibrium_matches_dispatch(name, request):
    spec = request.getfixturevalue(name)
    x = equilibrium_solve(spec)
    lay = layout(spec)
    s = lay.unpack(x)
    load, losses = losses_and_load(spec, x)
    costs = [spec.nodes[k].cost for k in spec.follower_nodes]
    p, lam = dispatch_oracle(costs, load + losses)
    assert abs(s.i_f[0]) < 1e-6
    assert s.v[spec.dgu_nodes[0]] == pytest.approx(spec.v_ref, abs=1e-9)
    assert np.allclose(s.p_ref, p, rtol=1e-9)
    assert s.lam == pytest.approx(lam, rel=1e-9)
    injected = s.v[spec.follower_nodes] @ s.i_f[1:]
    assert injected == pytest.approx(load + losses, rel=1e-9)


def test_equilibrium_is_rest_point(mg1):
    x = equilibrium_solve(mg1)
    loop = model(mg1).closed
    assert np.abs(loop.residual_weights() * loop.rhs(x)).max() < 1e-9


def test_equilibrium_fails_on_collapse(mg2):
    with pytest.raises((NoEquilibriumError, SingularLoadError)):
        equilibrium_solve(mg2, p=[0.0, 5e7, 0.0, 0.0])


def test_i_ext_mapping_and_array_agree(mg2):
    x = equilibrium_solve(mg2)
    a = vector_field(mg2, x, {1: 3.0})
    b = vector_field(mg2, x, np.array([0.0, 3.0, 0.0, 0.0]))
    assert np.array_equal(a, b)
    c = mg2.effective_capacitance()
    assert (a - vector_field(mg2, x))[1] == pytest.approx(-3.0 / c[1])


def test_external_price_matching_local_is_rest(mg2):
    x = equilibrium_solve(mg2)
    lam = layout(mg2).unpack(x).lam
    dx = vector_field(mg2, x, lam_glob=lam)
    w = model(mg2).open.residual_weights()
    assert np.abs(w * dx).max() < 1e-9
    dx = vector_field(mg2, x, lam_glob=lam + 100.0)
    assert np.abs(dx[layout(mg2)["p_ref"]]).max() > 1.0


def test_cpl_guard(mg2):
    x = equilibrium_solve(mg2)
    x[1] = 0.5
    with pytest.raises(SingularLoadError):
        vector_field(mg2, x)


def test_compiled_kernel_agrees(mg1):
    rng = np.random.default_rng(0)
    loop = model(mg1).closed
    kernel, params = loop.compiled()
    for _ in range(5):
        x = random_state(mg1, rng)
        assert np.allclose(kernel(params, x), loop.rhs(x), rtol=1e-13, atol=1e-9)


def test_single_grid_forming_unit(build):
    spec = build([{"kind": "grid_forming", "load": {"y": 0.01}}])
    # with no followers to absorb it the price integrates the load current forever
    with pytest.raises(NoEquilibriumError) as info:
        equilibrium_solve(spec)
    assert info.value.residual == pytest.approx(spec.kappa * 10.0, rel=1e-9)


def test_single_unit_no_load_is_exact_rest(build):
    spec = build([{"kind": "grid_forming"}])
    x = equilibrium_solve(spec)
    assert np.abs(vector_field(spec, x)).max() < 1e-9


# ---------------------------------------------------------------------------
# linearization


@pytest.mark.parametrize("name", ["mg1", "mg2"])
def test_jacobian_matches_finite_differences(name, request):
    spec = request.getfixturevalue(name)
    loop = model(spec).closed
    x = equilibrium_solve(spec)
    jac = loop.jacobian(x)
    h = 1e-6 * np.maximum(1.0, np.abs(x))
    fd = np.empty_like(jac)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h[k]
        fd[:, k] = (loop.rhs(x + e) - loop.rhs(x - e)) / (2 * h[k])
    scale = np.abs(jac).max(axis=1, keepdims=True) + 1.0
    assert np.abs((fd - jac) / scale).max() < 1e-6


def exactness_error(loop, xb, xt):
    xf = xb + xt
    xt = xf - xb  # perturbation actually represented in floating point
    a = loop.shifted(xb, xt)
    return np.linalg.norm(loop.rhs(xf) - loop.rhs(xb) - a @ xt) / np.linalg.norm(xt)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["mg1", "mg2", "reduced"]))
def test_shifted_identity_is_exact(seed, name):
    spec = shipped(name)
    rng = np.random.default_rng(seed)
    loop = model(spec).closed
    xb = random_state(spec, rng)
    xt = random_state(spec, rng) - xb
    assert exactness_error(loop, xb, xt) < 1e-9


def test_shifted_identity_open_port(mg2):
    rng = np.random.default_rng(1)
    xb = random_state(mg2, rng)
    xt = rng.uniform(-50, 50, xb.size)
    loop = model(mg2).open
    assert exactness_error(loop, xb, xt) < 1e-9
    a = shifted_matrix(mg2, xb, (xb + xt) - xb, econ_open=True)
    assert np.array_equal(a, loop.shifted(xb, (xb + xt) - xb))


def test_shifted_at_zero_is_jacobian(mg2):
    xb = equilibrium_solve(mg2)
    loop = model(mg2).closed
    assert np.array_equal(loop.shifted(xb, np.zeros_like(xb)), loop.jacobian(xb))


@pytest.mark.parametrize("name", ["mg1", "mg2", "reduced"])
def test_equilibrium_is_stable(name, request):
    spec = request.getfixturevalue(name)
    jac = model(spec).closed.jacobian(equilibrium_solve(spec))
    assert np.linalg.eigvals(jac).real.max() < 0


@pytest.mark.parametrize("name", ["mg1", "mg2", "reduced"])
def test_opposite_price_sign_is_unstable(name, request):
    spec = request.getfixturevalue(name)
    lay = layout(spec)
    jac = model(spec).closed.jacobian(equilibrium_solve(spec))
    jac[lay["lam"].start, lay["i_f"].start] *= -1.0
    assert np.linalg.eigvals(jac).real.max() > 0


# ---------------------------------------------------------------------------
# ports


def test_port_matrices(reduced):
    pm = port_matrices(reduced, [1])
    lay = layout(reduced)
    c = reduced.effective_capacitance()
    assert pm.B_ext.shape == (lay.dim, 1) and pm.C_ext.shape == (1, lay.dim)
    assert pm.B_ext[lay["v"].start + 1, 0] == pytest.approx(1.0 / c[1])
    assert pm.C_ext[0, lay["v"].start + 1] == 1.0
    assert pm.b_econ[lay["p_ref"]][0] == reduced.nodes[1].tau
    assert pm.c_econ[lay["lam"]][0] == 1.0
    with pytest.raises(ValueError):
        port_matrices(reduced, [1, 1])
    with pytest.raises(ValueError):
        port_matrices(reduced, [5])


def test_econ_port_drives_open_loop(mg2):
    x = equilibrium_solve(mg2)
    pm = port_matrices(mg2)
    lam = layout(mg2).unpack(x).lam
    loop = model(mg2).open
    assert np.allclose(vector_field(mg2, x, lam_glob=lam), loop.rhs(x) + pm.b_econ * lam)


# ---------------------------------------------------------------------------
# affine factorization


def test_interval_mul():
    assert interval_mul((-1.0, 2.0), (3.0, 4.0)) == (-4.0, 8.0)
    assert interval_mul((-2.0, -1.0), (-3.0, 5.0)) == (-10.0, 6.0)


@given(st.floats(0.0, 5000.0), st.floats(950.0, 1050.0), st.floats(-50.0, 50.0))
def test_cpl_interval_encloses(p, vb, vt):
    lo, hi = cpl_interval((0.0, 5000.0), (950.0, 1050.0), (-50.0, 50.0))
    val = p / (vb * (vb + vt))
    assert lo <= val <= hi


def test_cpl_interval_rejects_low_voltage():
    with pytest.raises(ValueError):
        cpl_interval((0.0, 1.0), (10.0, 20.0), (-15.0, 0.0))


def test_vertex_count_two_node(reduced):
    sh = affine_factorization(reduced, Envelope(p_box=(0.0, 2000.0)))
    assert len(sh.params) == 4
    assert len(list(sh.vertices())) == 16


def test_degenerate_boxes_fold(reduced):
    env = Envelope(p_box=(0.0, 0.0), v_box=(1000.0, 1000.0), i_box=(0.0, 0.0), i_tilde_box=(0.0, 0.0))
    sh = affine_factorization(reduced, env)
    assert sh.params == ()
    assert len(list(sh.vertices())) == 1


def test_vertex_count_scales_with_followers(mg1):
    sh = affine_factorization(mg1, Envelope(p_box=(0.0, 0.0)))
    assert len(sh.params) == 2 * (mg1.d - 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_parameter_values_reproduce_shifted_matrix(seed):
    reduced = shipped("reduced")
    rng = np.random.default_rng(seed)
    env = Envelope(p_box=(0.0, 2000.0))
    sh = affine_factorization(reduced, env)
    xb = random_state(reduced, rng, 950.0, 1050.0)
    xt = rng.uniform(-10.0, 10.0, xb.size)
    p = rng.uniform(0.0, 2000.0, reduced.n)
    vals = parameter_values(sh, reduced, xb, xt, p)
    loop = model(reduced).closed
    ref = loop.shifted(xb, xt, p)
    assert np.allclose(sh.assemble(vals), ref, rtol=1e-13, atol=1e-12)
    for prm, val in zip(sh.params, vals):
        if prm.name.startswith("a"):
            assert prm.lo <= val <= prm.hi
