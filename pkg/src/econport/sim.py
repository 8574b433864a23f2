"""Networked microgrid composition, scenario runs, steady-state detection and metrics."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import LoadStep
from .dynamics import ClosedLoop, NoEquilibriumError, model
from .model import NetworkSpec, ZipLoad, layout, validate_network
from .numerics.newton import NewtonError, newton_solve
from .numerics.ode import Event, IntegratorConfig, integrate

log = logging.getLogger(__name__)


class Regime(enum.Enum):
    ELECTRIC = "electric"
    ECONOMIC = "economic"


class ScenarioError(RuntimeError):
    pass


@dataclass
class NetworkModel:
    """Flat closed loop of a whole network plus the bookkeeping to read it.

    State order: microgrid states in config order (each in its own
    :class:`StateLayout`), then tie-line currents, then consensus states.
    """

    net: NetworkSpec
    regime: Regime
    loop: ClosedLoop
    offsets: list
    layouts: list
    tie_slice: slice
    w_slice: slice

    @property
    def dim(self) -> int:
        return self.loop.dim

    def mg_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k] + self.layouts[k].dim)

    def idx(self, k: int, segment: str) -> np.ndarray:
        s = self.layouts[k][segment]
        return np.arange(s.start, s.stop) + self.offsets[k]

    def mg_state(self, x, k: int):
        return self.layouts[k].unpack(np.asarray(x)[self.mg_slice(k)])

    def node_offset(self, k: int) -> int:
        return sum(mg.n for mg in self.net.microgrids[:k])

    def set_load(self, k: int, node: int, load: ZipLoad) -> None:
        self.loop.set_load(self.node_offset(k) + node, load)

    def local_prices(self, x) -> np.ndarray:
        return np.array([x[self.idx(k, "lam")[0]] for k in range(len(self.layouts))])

    def external_prices(self, x) -> np.ndarray:
        lam = self.local_prices(x)
        if self.regime is Regime.ECONOMIC:
            return np.asarray(x)[self.w_slice] + lam
        return lam

    def __call__(self, t, x):
        return self.loop.rhs(x)

    def compiled(self):
        return self.loop.compiled()


def compose_network(net: NetworkSpec, regime: Regime) -> NetworkModel:
    """Assemble the interconnected closed loop.

    Tie lines become extra current states driven by the endpoint voltage
    difference. In the electric regime each microgrid self-closes its
    economic port; in the economic regime followers see
    ``lam_glob = w + lam_loc`` from the consensus states.
    """
    regime = Regime(regime)
    problems = validate_network(net)
    if problems:
        raise ValueError("; ".join(problems))
    if regime is Regime.ECONOMIC and net.consensus is None:
        raise ValueError("economic regime needs a consensus configuration")
    mgs = net.microgrids
    econ = regime is Regime.ECONOMIC
    loops = [model(mg).open if econ else model(mg).closed for mg in mgs]
    layouts = [layout(mg) for mg in mgs]
    offsets = list(np.cumsum([0] + [lp.dim for lp in loops[:-1]]))
    n_mg = sum(lp.dim for lp in loops)
    n_tie = len(net.tie_lines)
    n_w = len(mgs) if econ else 0
    N = n_mg + n_tie + n_w
    J = np.zeros((N, N))
    b = np.zeros(N)
    cat = {k: [] for k in ("v_idx", "cap", "y", "p", "i_hat", "prod_row", "prod_v", "prod_i",
                           "line_row", "line_from", "line_to", "line_r", "line_l")}
    for off, lp in zip(offsets, loops):
        s = slice(off, off + lp.dim)
        J[s, s] = lp.J
        b[s] = lp.b
        for key in ("v_idx", "prod_row", "prod_v", "prod_i", "line_row", "line_from", "line_to"):
            cat[key].append(getattr(lp, key) + off)
        for key in ("cap", "y", "p", "i_hat", "line_r", "line_l"):
            cat[key].append(getattr(lp, key))
    tie_slice = slice(n_mg, n_mg + n_tie)
    for j, tl in enumerate(net.tie_lines):
        row = n_mg + j
        va = offsets[tl.mg_a] + layouts[tl.mg_a]["v"].start + tl.node_a
        vb = offsets[tl.mg_b] + layouts[tl.mg_b]["v"].start + tl.node_b
        ca = loops[tl.mg_a].cap[tl.node_a]
        cb = loops[tl.mg_b].cap[tl.node_b]
        # same orientation as an internal line from a to b
        J[va, row] += 1.0 / ca
        J[vb, row] -= 1.0 / cb
        J[row, va] -= 1.0 / tl.l_pi
        J[row, vb] += 1.0 / tl.l_pi
        J[row, row] = -tl.r_pi / tl.l_pi
        cat["line_row"].append([row])
        cat["line_from"].append([va])
        cat["line_to"].append([vb])
        cat["line_r"].append([tl.r_pi])
        cat["line_l"].append([tl.l_pi])
    w_slice = slice(n_mg + n_tie, N)
    if econ:
        lap = np.asarray(net.consensus.laplacian, dtype=float)
        mu = net.consensus.mu
        lam_idx = [offsets[k] + layouts[k]["lam"].start for k in range(len(mgs))]
        J[w_slice, w_slice] = -(mu * np.eye(len(mgs)) + lap)
        for a in range(len(mgs)):
            for c in range(len(mgs)):
                J[n_mg + n_tie + a, lam_idx[c]] -= lap[a, c]
        for k, mg in enumerate(mgs):
            sp = layouts[k]["p_ref"]
            tau = np.array([mg.nodes[i].tau for i in mg.follower_nodes])
            rows = np.arange(sp.start, sp.stop) + offsets[k]
            J[rows, lam_idx[k]] += tau
            J[rows, n_mg + n_tie + k] += tau
    arrays = {k: np.concatenate(v) if v else np.zeros(0) for k, v in cat.items()}
    for key in ("v_idx", "prod_row", "prod_v", "prod_i", "line_row", "line_from", "line_to"):
        arrays[key] = arrays[key].astype(int)
    loop = ClosedLoop(J=J, b=b, **arrays)
    return NetworkModel(net, regime, loop, [int(o) for o in offsets], layouts, tie_slice, w_slice)


def network_equilibrium(nm: NetworkModel, x0=None, tol: float = 1e-9, max_iter: int = 100):
    if x0 is None:
        x0 = np.zeros(nm.dim)
        for k, mg in enumerate(nm.net.microgrids):
            x0[nm.idx(k, "v")] = mg.v_ref
    w = nm.loop.residual_weights()
    try:
        return newton_solve(nm.loop.rhs, nm.loop.jacobian, x0, tol=tol, max_iter=max_iter, weights=w)
    except NewtonError as exc:
        raise NoEquilibriumError(str(exc), exc.residual) from None


def initial_state(nm: NetworkModel) -> np.ndarray:
    """Electric-only equilibrium for the current loads, consensus states at zero."""
    if nm.regime is Regime.ELECTRIC:
        return network_equilibrium(nm)
    elec = compose_network(nm.net, Regime.ELECTRIC)
    elec.loop = elec.loop.copy()
    for node, load in enumerate(nm.loop.loads()):
        elec.loop.set_load(node, load)
    x = np.zeros(nm.dim)
    x[: elec.dim] = network_equilibrium(elec)
    return x


# ---------------------------------------------------------------------------
# steady states and metrics


def rate_scale(nm: NetworkModel) -> np.ndarray:
    """Per-state divisor turning x' into V/100, A, W/1000 (prices per 1000)."""
    scale = np.ones(nm.dim)
    for k, mg in enumerate(nm.net.microgrids):
        scale[nm.idx(k, "v")] = 100.0
        e = nm.idx(k, "e")
        scale[e[0]] = 100.0
        scale[e[1:]] = 1000.0
        scale[nm.idx(k, "p_ref")] = 1000.0
        scale[nm.idx(k, "lam")] = 1000.0
    scale[nm.w_slice] = 1000.0
    return scale


def trajectory_rates(t, xs, seg=None) -> np.ndarray:
    """Backward differences ``(x_k - x_(k-1)) / (t_k - t_(k-1))`` within each segment.

    The first sample of a segment reuses the next difference (zero for a lone sample).
    """
    t = np.asarray(t, dtype=float)
    xs = np.asarray(xs, dtype=float)
    seg = np.zeros(t.size, dtype=int) if seg is None else np.asarray(seg)
    rates = np.zeros_like(xs)
    for s in np.unique(seg):
        idx = np.nonzero(seg == s)[0]
        if idx.size < 2:
            continue
        d = np.diff(xs[idx], axis=0) / np.diff(t[idx])[:, None]
        rates[idx[1:]] = d
        rates[idx[0]] = d[0]
    return rates


def detect_steady_state(t, rates, bounds, window: float = 1.0, tol: float = 1e-6) -> list:
    """Per interval ``[a, b)``: steady iff every normalized rate in ``[b - window, b]`` is below ``tol``.

    ``rates`` are already normalized derivatives (one row per sample); the
    representative state index is the last sample of the interval.
    """
    t = np.asarray(t, dtype=float)
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    out = []
    for a, b in bounds:
        if window >= b - a:
            raise ValueError(f"window {window} s does not fit in interval [{a}, {b}]")
        sel = np.nonzero((t >= b - window - 1e-12) & (t <= b + 1e-12))[0]
        # the pre-event sample at b belongs to this interval; post-event copies do not
        sel = sel[: np.searchsorted(t[sel], b, side="right")]
        last = int(sel[-1]) if sel.size else int(np.searchsorted(t, b, side="right") - 1)
        peak = float(np.abs(rates[sel]).max()) if sel.size else np.inf
        out.append((peak < tol, peak, last))
    return out


def metrics(nm: NetworkModel, x) -> dict:
    """Power bookkeeping for one state: injections, prices, loads, losses and balance."""
    x = np.asarray(x, dtype=float)
    loop = nm.loop
    v = x[loop.v_idx]
    load = float(np.sum(loop.y * v * v + loop.p + loop.i_hat * v))
    i_line = x[loop.line_row]
    losses = float(np.sum(loop.line_r * i_line * i_line))
    injected, p_ref, gf_current = [], [], []
    for k, mg in enumerate(nm.net.microgrids):
        s = nm.mg_state(x, k)
        nodes = mg.dgu_nodes
        injected.append((s.v[list(nodes)] * s.i_f).tolist())
        p_ref.append(s.p_ref.tolist())
        gf_current.append(float(s.i_f[0]))
    total_inj = float(sum(sum(row) for row in injected))
    total_ref = float(sum(sum(row) for row in p_ref))
    return {
        "injected_power": injected,
        "p_ref": p_ref,
        "grid_forming_current": gf_current,
        "local_price": nm.local_prices(x).tolist(),
        "external_price": nm.external_prices(x).tolist(),
        "load_power": load,
        "line_losses": losses,
        "balance_residual": total_inj - (load + losses),
        "reference_balance_residual": total_ref - (load + losses),
    }


# ---------------------------------------------------------------------------
# scenario runs


@dataclass
class IntervalSummary:
    start: float
    end: float
    steady: bool
    max_rate: float
    end_metrics: dict
    steady_metrics: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "steady": self.steady,
            "max_rate": self.max_rate,
            "end_metrics": self.end_metrics,
            "steady_metrics": self.steady_metrics,
        }


@dataclass
class ScenarioResult:
    regime: Regime
    t: np.ndarray
    x: np.ndarray
    rates: np.ndarray
    series: list
    balance_residual: np.ndarray
    intervals: list
    model: NetworkModel = field(repr=False)
    n_steps: int = 0
    n_rejected: int = 0

    def columns(self):
        """``(name, unit, values)`` per trajectory CSV column."""
        cols = [("t", "s", self.t)]
        for k, (mg, s) in enumerate(zip(self.model.net.microgrids, self.series)):
            tag = mg.name
            for j, node in enumerate(range(mg.n)):
                cols.append((f"{tag}.v[{mg.nodes[node].label}]", "V", s["v"][:, j]))
            for j, node in enumerate(mg.dgu_nodes):
                cols.append((f"{tag}.i_f[{mg.nodes[node].label}]", "A", s["i_f"][:, j]))
            for j, node in enumerate(mg.dgu_nodes):
                cols.append((f"{tag}.power[{mg.nodes[node].label}]", "W", s["power"][:, j]))
            cols.append((f"{tag}.lam_loc", "price", s["lam_loc"]))
            cols.append((f"{tag}.lam_glob", "price", s["lam_glob"]))
        cols.append(("balance_residual", "W", self.balance_residual))
        return cols


def _series(nm: NetworkModel, xs: np.ndarray) -> list:
    out = []
    for k, mg in enumerate(nm.net.microgrids):
        v = xs[:, nm.idx(k, "v")]
        i_f = xs[:, nm.idx(k, "i_f")]
        lam = xs[:, nm.idx(k, "lam")[0]]
        glob = lam + xs[:, nm.w_slice.start + k] if nm.regime is Regime.ECONOMIC else lam.copy()
        power = v[:, list(mg.dgu_nodes)] * i_f
        out.append({"v": v, "i_f": i_f, "power": power, "lam_loc": lam, "lam_glob": glob})
    return out


def group_schedule(schedule: Sequence[LoadStep]) -> list:
    groups = {}
    for step in schedule:
        groups.setdefault(step.time, []).append(step)
    return sorted(groups.items())


def run_scenario(
    net: NetworkSpec,
    regime,
    schedule: Sequence[LoadStep] = (),
    config: Optional[IntegratorConfig] = None,
    x0=None,
    window: float = 1.0,
    tol: float = 1e-6,
) -> ScenarioResult:
    """Simulate the network under timed load steps and summarize each interval.

    Steps at ``t <= 0`` set the initial loads. The default start is the
    electric-only equilibrium for those loads with the consensus states at
    zero.
    """
    config = config or IntegratorConfig(horizon=60.0, sample_dt=0.01)
    nm = compose_network(net, regime)
    nm.loop = nm.loop.copy()
    groups = group_schedule(schedule)
    horizon = config.horizon
    for time, steps in groups:
        if time > horizon:
            raise ScenarioError(f"load step at t = {time} s is beyond the horizon {horizon} s")
        if time <= 0:
            for st in steps:
                nm.set_load(st.microgrid, st.node, st.load)
    x_start = initial_state(nm) if x0 is None else np.asarray(x0, dtype=float)

    # one load snapshot per interval for derivative evaluation afterwards
    bounds, loops = [], [nm.loop.copy()]
    edges = [0.0] + [time for time, _ in groups if 0 < time < horizon] + [horizon]
    bounds = list(zip(edges[:-1], edges[1:]))

    def make_action(steps):
        def action(x):
            for st in steps:
                nm.set_load(st.microgrid, st.node, st.load)
            loops.append(nm.loop.copy())
            return None

        return action

    events = [Event(time, make_action(steps)) for time, steps in groups if 0 < time < horizon]
    traj = integrate(nm, x_start, config, events=events)

    # interval index of each sample: post-event samples belong to the next interval
    seg = np.zeros(traj.t.size, dtype=int)
    for j, idx in enumerate(traj.event_indices):
        seg[idx:] = j + 1
    rates = trajectory_rates(traj.t, traj.x, seg) / rate_scale(nm)
    saved = nm.loop
    summaries = []
    pre_event = [idx - 1 for idx in traj.event_indices] + [traj.t.size - 1]
    for j, ((a, b), (steady, peak, _)) in enumerate(zip(bounds, _detect_by_segment(traj.t, rates, seg, bounds, window, tol))):
        nm.loop = loops[j]
        m = metrics(nm, traj.x[pre_event[j]])
        summaries.append(IntervalSummary(a, b, steady, peak, m, m if steady else None))
    bal = np.empty(traj.t.size)
    for i, (x, s) in enumerate(zip(traj.x, seg)):
        nm.loop = loops[s]
        bal[i] = metrics(nm, x)["balance_residual"]
    nm.loop = saved
    return ScenarioResult(
        Regime(regime), traj.t, traj.x, rates, _series(nm, traj.x), bal, summaries, nm,
        traj.n_steps, traj.n_rejected,
    )


def _detect_by_segment(t, rates, seg, bounds, window, tol):
    out = []
    for j, bnd in enumerate(bounds):
        mask = seg == j
        out.extend(detect_steady_state(t[mask], rates[mask], [bnd], window, tol))
    return out
