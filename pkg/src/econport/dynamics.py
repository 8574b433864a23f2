"""Closed-loop microgrid dynamics, shifted-coordinate matrices and equilibria.

A closed loop is stored as ``x' = J x + b - C^-1 p / v + bilinear terms``:
everything except the constant-power loads and the followers' injected-power
products ``v_i i_f,i`` is linear. The same split gives the analytic Jacobian
and the exact shifted form ``f(xb + xt) - f(xb) = A(xt, xb, P) xt``.

Sign conventions (see README): the local price rises while the grid-forming
unit covers a deficit, ``lam' = +kappa i_f,1``; followers move toward marginal
cost ``p_ref' = -tau (2 q p_ref + r - lam)``.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .model import MicrogridSpec, ZipLoad, build_incidence, check, layout, selector_matrices
from .numerics.newton import NewtonError, newton_solve

CPL_GUARD_V = 1.0


class SingularLoadError(ValueError):
    pass


class NoEquilibriumError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def zip_current(v: float, load: ZipLoad) -> float:
    if load.p != 0 and v <= CPL_GUARD_V:
        raise SingularLoadError(f"constant-power load {load.p} W at v = {v} V")
    cpl = load.p / v if load.p != 0 else 0.0
    return load.y * v + cpl + load.i_hat


@dataclass
class ClosedLoop:
    """``x' = J x + b - p/(c v) [voltage rows] - v i [power-error rows]``.

    ``v_idx``/``cap``/``p`` describe every node voltage state; ``prod_row``,
    ``prod_v``, ``prod_i`` list the follower power-error products. Line rows
    are re-evaluated as ``((v_to - v_from) - R i) / L`` so the voltage
    difference is formed before the large ``1/L`` scaling. Load
    parameters are mutable through :meth:`set_load` so timed events can step
    them; everything else is fixed at construction.
    """

    J: np.ndarray
    b: np.ndarray
    v_idx: np.ndarray
    cap: np.ndarray
    y: np.ndarray
    p: np.ndarray
    i_hat: np.ndarray
    prod_row: np.ndarray
    prod_v: np.ndarray
    prod_i: np.ndarray
    line_row: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    line_from: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    line_to: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    line_r: np.ndarray = field(default_factory=lambda: np.zeros(0))
    line_l: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _cpl_rows: np.ndarray = field(init=False, repr=False)
    _cpl_coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._refresh()

    @property
    def dim(self) -> int:
        return self.b.size

    def _refresh(self):
        mask = self.p != 0
        self._cpl_rows = self.v_idx[mask]
        self._cpl_coef = self.p[mask] / self.cap[mask]

    def copy(self) -> "ClosedLoop":
        return ClosedLoop(
            self.J.copy(), self.b.copy(), self.v_idx.copy(), self.cap.copy(), self.y.copy(),
            self.p.copy(), self.i_hat.copy(), self.prod_row.copy(), self.prod_v.copy(),
            self.prod_i.copy(), self.line_row.copy(), self.line_from.copy(), self.line_to.copy(),
            self.line_r.copy(), self.line_l.copy(),
        )

    def set_load(self, node: int, load: ZipLoad) -> None:
        """Replace the ZIP load of voltage state ``v_idx[node]``."""
        row, c = self.v_idx[node], self.cap[node]
        self.J[row, row] += (self.y[node] - load.y) / c
        self.b[row] += (self.i_hat[node] - load.i_hat) / c
        self.y[node], self.p[node], self.i_hat[node] = load.y, load.p, load.i_hat
        self._refresh()

    def residual_weights(self) -> np.ndarray:
        """Row scaling to the equations' physical form: C v' [A], L i_pi' [V]."""
        w = np.ones(self.dim)
        w[self.v_idx] = self.cap
        w[self.line_row] = self.line_l
        return w

    def loads(self) -> list:
        return [ZipLoad(float(a), float(b), float(c)) for a, b, c in zip(self.y, self.p, self.i_hat)]

    def __call__(self, t, x):
        return self.rhs(x)

    def compiled(self):
        """``(kernel, params)`` for the compiled integrator path."""
        return _loop_kernel, (
            self.J, self.b, self._cpl_rows, self._cpl_coef, self.prod_row, self.prod_v,
            self.prod_i, self.line_row, self.line_from, self.line_to, self.line_r, self.line_l,
        )

    def rhs(self, x, i_ext=None):
        dx = self.J @ x + self.b
        rows = self._cpl_rows
        if rows.size:
            v = x[rows]
            if v.min() <= CPL_GUARD_V:
                bad = rows[np.argmin(v)]
                raise SingularLoadError(f"constant-power load at state {bad} with v = {x[bad]:.6g} V")
            dx[rows] -= self._cpl_coef / v
        dx[self.prod_row] -= x[self.prod_v] * x[self.prod_i]
        if self.line_row.size:
            lr = self.line_row
            dx[lr] = ((x[self.line_to] - x[self.line_from]) - self.line_r * x[lr]) / self.line_l
        if i_ext is not None:
            dx[self.v_idx] -= np.asarray(i_ext, dtype=float) / self.cap
        return dx

    def jacobian(self, x):
        return self.shifted(x, np.zeros_like(x))

    def shifted(self, x_bar, x_tilde, p=None):
        """``A(xt, xb, P)`` with ``f(xb + xt) - f(xb) = A xt`` exactly."""
        p = self.p if p is None else np.asarray(p, dtype=float)
        a = self.J.copy()
        v_bar = x_bar[self.v_idx]
        v_full = v_bar + x_tilde[self.v_idx]
        nz = p != 0
        if nz.any():
            if min(v_bar[nz].min(), v_full[nz].min()) <= CPL_GUARD_V:
                raise SingularLoadError("constant-power load at a voltage <= 1 V")
            rows = self.v_idx[nz]
            a[rows, rows] += p[nz] / (self.cap[nz] * v_bar[nz] * v_full[nz])
        i_full = x_bar[self.prod_i] + x_tilde[self.prod_i]
        a[self.prod_row, self.prod_v] -= i_full
        a[self.prod_row, self.prod_i] -= x_bar[self.prod_v]
        return a


@njit(cache=True)
def _loop_kernel(params, x):
    J, b, cpl_rows, cpl_coef, prod_row, prod_v, prod_i, line_row, line_from, line_to, line_r, line_l = params
    dx = J @ x + b
    for j in range(cpl_rows.size):
        v = x[cpl_rows[j]]
        if v <= CPL_GUARD_V:
            dx[:] = np.nan
            return dx
        dx[cpl_rows[j]] -= cpl_coef[j] / v
    for j in range(prod_row.size):
        dx[prod_row[j]] -= x[prod_v[j]] * x[prod_i[j]]
    for j in range(line_row.size):
        r = line_row[j]
        dx[r] = ((x[line_to[j]] - x[line_from[j]]) - line_r[j] * x[r]) / line_l[j]
    return dx


@dataclass(frozen=True)
class MicrogridModel:
    spec: MicrogridSpec
    closed: ClosedLoop  # economic port self-closed: followers see the local price
    open: ClosedLoop  # economic port open: price column removed, fed through b_econ

    @property
    def layout(self):
        return layout(self.spec)


def _assemble(spec: MicrogridSpec, self_closed: bool) -> ClosedLoop:
    lay = layout(spec)
    n, d, nl, N = spec.n, spec.d, spec.l, lay.dim
    sv, sf, se, sl, sp, sg = (lay[k] for k in lay.SEGMENTS)
    c = spec.effective_capacitance()
    m = build_incidence(spec)
    i_f, _, _, emb = selector_matrices(spec)
    dgu = spec.dgu_nodes
    fol = spec.follower_nodes
    nodes = spec.nodes
    y = np.array([nd.load.y for nd in nodes])
    p = np.array([nd.load.p for nd in nodes])
    i_hat = np.array([nd.load.i_hat for nd in nodes])
    r_pi = np.array([ln.r_pi for ln in spec.lines])
    l_pi = np.array([ln.l_pi for ln in spec.lines])
    q = np.array([nodes[k].cost.q for k in fol])
    r = np.array([nodes[k].cost.r for k in fol])
    tau = np.array([nodes[k].tau for k in fol])

    J = np.zeros((N, N))
    b = np.zeros(N)
    J[sv, sv] = np.diag(-y / c)
    J[sv, sf] = i_f / c[:, None]
    J[sv, sl] = -m / c[:, None]
    b[sv] = -i_hat / c
    J[sf, sv] = np.diag([nodes[k].alpha for k in dgu]) @ i_f.T
    J[sf, sf] = np.diag([nodes[k].beta for k in dgu])
    J[sf, se] = np.diag([nodes[k].gamma for k in dgu])
    e0 = se.start
    J[e0, sv.start + dgu[0]] = -1.0
    b[e0] = spec.v_ref
    J[se, sp] = emb
    if nl:
        J[sl, sv] = m.T / l_pi[:, None]
        J[sl, sl] = np.diag(-r_pi / l_pi)
    if d > 1:
        J[sp, sp] = np.diag(-2.0 * tau * q)
        b[sp] = -tau * r
        if self_closed:
            J[sp, sg] = tau[:, None]
    J[sg.start, sf.start] = spec.kappa

    prod_row = np.arange(e0 + 1, e0 + d)
    prod_v = np.array([sv.start + k for k in fol], dtype=int)
    prod_i = np.arange(sf.start + 1, sf.start + d)
    line_from = np.array([sv.start + ln.from_node for ln in spec.lines], dtype=int)
    line_to = np.array([sv.start + ln.to_node for ln in spec.lines], dtype=int)
    return ClosedLoop(
        J, b, np.arange(n), c, y, p, i_hat, prod_row, prod_v, prod_i,
        np.arange(sl.start, sl.stop), line_from, line_to, r_pi, l_pi,
    )


@functools.lru_cache(maxsize=64)
def model(spec: MicrogridSpec) -> MicrogridModel:
    check(spec)
    return MicrogridModel(spec, _assemble(spec, True), _assemble(spec, False))


def _loop(spec, lam_glob, p=None) -> ClosedLoop:
    mdl = model(spec)
    loop = mdl.closed if lam_glob is None else mdl.open
    if p is not None or lam_glob is not None:
        loop = loop.copy()
        if p is not None:
            for k, pk in enumerate(np.asarray(p, dtype=float)):
                nd = spec.nodes[k].load
                loop.set_load(k, ZipLoad(nd.y, float(pk), nd.i_hat))
        if lam_glob is not None:
            sp = mdl.layout["p_ref"]
            tau = np.array([spec.nodes[k].tau for k in spec.follower_nodes])
            loop.b[sp] += tau * lam_glob
    return loop


def vector_field(spec: MicrogridSpec, x, i_ext=None, lam_glob: Optional[float] = None):
    """Closed-loop right-hand side.

    ``i_ext`` holds the current drawn from each node by external connections
    (length n, or a ``{node: current}`` mapping); ``lam_glob=None`` self-closes
    the economic port, otherwise followers track the external price.
    """
    if isinstance(i_ext, dict):
        full = np.zeros(spec.n)
        for node, cur in i_ext.items():
            full[node] = cur
        i_ext = full
    return _loop(spec, lam_glob).rhs(np.asarray(x, dtype=float), i_ext)


def shifted_matrix(spec: MicrogridSpec, x_bar, x_tilde, p=None, econ_open: bool = False):
    mdl = model(spec)
    loop = mdl.open if econ_open else mdl.closed
    return loop.shifted(np.asarray(x_bar, float), np.asarray(x_tilde, float), p)


def initial_guess(spec: MicrogridSpec) -> np.ndarray:
    lay = layout(spec)
    x = np.zeros(lay.dim)
    x[lay["v"]] = spec.v_ref
    return x


def equilibrium_solve(
    spec: MicrogridSpec,
    p=None,
    lam_glob: Optional[float] = None,
    x0=None,
    tol: float = 1e-9,
    max_iter: int = 100,
):
    """Steady state of the closed loop by damped Newton from ``v = v_ref``.

    Convergence is judged on the row-scaled residual (see
    :meth:`ClosedLoop.residual_weights`); the raw line rows cannot go below
    about ulp(v)/L_pi.

    ``p`` overrides the constant-power loads. With an external price the
    local-price integrator is excluded from the solve and the equilibrium
    exists only if the grid-forming current vanishes anyway.
    """
    loop = _loop(spec, lam_glob, p)
    lay = layout(spec)
    g = lay["lam"].start
    x_start = initial_guess(spec) if x0 is None else np.array(x0, dtype=float)
    fixed = None
    if lam_glob is not None:
        x_start[g] = lam_glob
        fixed = [g]
    elif spec.d == 1:
        # without followers the price feeds nothing back; solve the rest
        fixed = [g]
    w = loop.residual_weights()
    try:
        x = newton_solve(loop.rhs, loop.jacobian, x_start, tol=tol, max_iter=max_iter, fixed=fixed, weights=w)
    except NewtonError as exc:
        raise NoEquilibriumError(str(exc), exc.residual) from None
    res = np.abs(w * loop.rhs(x)).max()
    if res >= tol:
        raise NoEquilibriumError("price integrator is not at rest", res)
    return x


@dataclass(frozen=True)
class PortMatrices:
    """Port maps in shifted coordinates.

    Electric ports take the current *injected* into the node by the external
    network (``B_ext = C^-1 t_i``) and output the node voltage
    (``C_ext = t_i^T``), so ``v_ext^T i_ext`` is the power flowing in.
    """

    B_ext: np.ndarray
    C_ext: np.ndarray
    b_econ: np.ndarray
    c_econ: np.ndarray
    nodes: tuple = ()


def port_matrices(spec: MicrogridSpec, electric_port_nodes: Sequence[int] = ()) -> PortMatrices:
    nodes = list(electric_port_nodes)
    if len(set(nodes)) != len(nodes):
        raise ValueError("duplicate electric port node")
    for k in nodes:
        if not 0 <= k < spec.n:
            raise ValueError(f"port node {k} does not exist")
    lay = layout(spec)
    c = spec.effective_capacitance()
    B = np.zeros((lay.dim, len(nodes)))
    C = np.zeros((len(nodes), lay.dim))
    for j, k in enumerate(nodes):
        B[lay["v"].start + k, j] = 1.0 / c[k]
        C[j, lay["v"].start + k] = 1.0
    b_econ = np.zeros(lay.dim)
    b_econ[lay["p_ref"]] = [spec.nodes[k].tau for k in spec.follower_nodes]
    c_econ = np.zeros(lay.dim)
    c_econ[lay["lam"]] = 1.0
    return PortMatrices(B, C, b_econ, c_econ, tuple(nodes))


# ---------------------------------------------------------------------------
# affine parameter factorization over an envelope


def _box(val, size):
    arr = np.asarray(val, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (size, 1))
    if arr.shape != (size, 2):
        raise ValueError(f"interval box must be (lo, hi) or {size} such pairs")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError("interval with lo > hi")
    return arr


@dataclass(frozen=True)
class Envelope:
    """Boxes for equilibria (``v_box``, ``i_box``), deviations
    (``v_tilde_box``, ``i_tilde_box``) and constant-power loads (``p_box``).
    Each is a single ``(lo, hi)`` pair applied to every node/DGU or one pair
    per node/DGU."""

    v_box: tuple = (950.0, 1050.0)
    i_box: tuple = (-15.0, 15.0)
    v_tilde_box: tuple = (-50.0, 50.0)
    i_tilde_box: tuple = (-15.0, 15.0)
    p_box: tuple = (0.0, 0.0)

    def boxes(self, spec: MicrogridSpec):
        return (
            _box(self.v_box, spec.n),
            _box(self.i_box, spec.d),
            _box(self.v_tilde_box, spec.n),
            _box(self.i_tilde_box, spec.d),
            _box(self.p_box, spec.n),
        )

    def to_dict(self) -> dict:
        def plain(b):
            return np.asarray(b, dtype=float).tolist()

        return {k: plain(getattr(self, k)) for k in ("v_box", "i_box", "v_tilde_box", "i_tilde_box", "p_box")}


@dataclass(frozen=True)
class AffineParam:
    name: str
    lo: float
    hi: float
    coeff: np.ndarray

    @property
    def degenerate(self) -> bool:
        return self.lo == self.hi


def interval_mul(a, b):
    prods = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
    return min(prods), max(prods)


def cpl_interval(p_box, v_box, v_tilde_box):
    """Bounds of ``p / (vb (vb + vt))`` by monotone interval arithmetic."""
    v_full = (v_box[0] + v_tilde_box[0], v_box[1] + v_tilde_box[1])
    if v_box[0] <= CPL_GUARD_V or v_full[0] <= CPL_GUARD_V:
        raise ValueError("envelope admits v <= 1 V where a constant-power load may act")
    den = interval_mul(v_box, v_full)
    return interval_mul(p_box, (1.0 / den[1], 1.0 / den[0]))


@dataclass(frozen=True)
class ShiftedSystem:
    """``A(theta) = A0 + sum_j theta_j A_j`` over a parameter box.

    Parameters: ``a_k = p_k/(vb_k v_k)`` per node, ``b_k = vb`` and
    ``c_k = i_f`` per follower. Degenerate intervals are folded into ``A0``.
    """

    a0: np.ndarray
    params: tuple
    envelope: Envelope
    econ_open: bool = False
    equilibrium: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.a0.shape[0]

    def assemble(self, values) -> np.ndarray:
        a = self.a0.copy()
        for prm, val in zip(self.params, values):
            a += val * prm.coeff
        return a

    def vertices(self):
        return itertools.product(*[(prm.lo, prm.hi) for prm in self.params])


def affine_factorization(
    spec: MicrogridSpec, envelope: Envelope, econ_open: bool = False, equilibrium=None
) -> ShiftedSystem:
    mdl = model(spec)
    loop = mdl.open if econ_open else mdl.closed
    lay = mdl.layout
    v_box, i_box, vt_box, it_box, p_box = envelope.boxes(spec)
    a0 = loop.J.copy()
    params = []
    for k in range(spec.n):
        row = lay["v"].start + k
        coeff = np.zeros_like(a0)
        coeff[row, row] = 1.0 / loop.cap[k]
        if p_box[k, 0] == 0 and p_box[k, 1] == 0:
            continue
        lo, hi = cpl_interval(p_box[k], v_box[k], vt_box[k])
        params.append(AffineParam(f"a[{k}]", lo, hi, coeff))
    for j, node in enumerate(spec.follower_nodes):
        dgu = j + 1
        row = lay["e"].start + dgu
        col_i = lay["i_f"].start + dgu
        col_v = lay["v"].start + node
        coeff = np.zeros_like(a0)
        coeff[row, col_i] = -1.0
        params.append(AffineParam(f"b[{dgu}]", v_box[node, 0], v_box[node, 1], coeff))
        coeff = np.zeros_like(a0)
        coeff[row, col_v] = -1.0
        lo = i_box[dgu, 0] + it_box[dgu, 0]
        hi = i_box[dgu, 1] + it_box[dgu, 1]
        params.append(AffineParam(f"c[{dgu}]", lo, hi, coeff))
    live = []
    for prm in params:
        if prm.degenerate:
            a0 = a0 + prm.lo * prm.coeff
        else:
            live.append(prm)
    eq = None if equilibrium is None else np.asarray(equilibrium, dtype=float)
    return ShiftedSystem(a0, tuple(live), envelope, econ_open, eq)


def parameter_values(shifted: ShiftedSystem, spec: MicrogridSpec, x_bar, x_tilde, p) -> list:
    """Parameter assignment reproducing ``A(xt, xb, P)`` for a concrete state."""
    lay = layout(spec)
    vb = np.asarray(x_bar)[lay["v"]]
    vf = vb + np.asarray(x_tilde)[lay["v"]]
    i_full = np.asarray(x_bar)[lay["i_f"]] + np.asarray(x_tilde)[lay["i_f"]]
    p = np.asarray(p, dtype=float)
    vals = {}
    for k in range(spec.n):
        vals[f"a[{k}]"] = p[k] / (vb[k] * vf[k])
    for j, node in enumerate(spec.follower_nodes):
        vals[f"b[{j + 1}]"] = vb[node]
        vals[f"c[{j + 1}]"] = i_full[j + 1]
    return [vals[prm.name] for prm in shifted.params]
