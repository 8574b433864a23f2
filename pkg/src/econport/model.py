"""Declarative microgrid/network descriptions, incidence matrices and the state layout.

State of one microgrid, in this order::

    x = (v [n], i_f [d], e [d], i_pi [l], p_ref [d-1], lam [1]),   N = n + 3d + l

DGUs are ordered with the grid-forming unit first, followers after it in
node order.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .pricing import QuadraticCost

log = logging.getLogger(__name__)


class NodeKind(enum.Enum):
    GRID_FORMING = "grid_forming"
    GRID_FOLLOWING = "grid_following"
    LOAD_ONLY = "load_only"


@dataclass(frozen=True)
class ZipLoad:
    y: float = 0.0
    p: float = 0.0
    i_hat: float = 0.0


@dataclass(frozen=True)
class Filter:
    l_f: float
    r_f: float


@dataclass(frozen=True)
class Gains:
    k_alpha: float
    k_beta: float
    k_gamma: float


@dataclass(frozen=True)
class NodeSpec:
    kind: NodeKind
    c_f: float
    load: ZipLoad = ZipLoad()
    filter: Optional[Filter] = None
    gains: Optional[Gains] = None
    cost: Optional[QuadraticCost] = None
    tau: Optional[float] = None
    label: Optional[str] = None

    @property
    def has_dgu(self) -> bool:
        return self.kind is not NodeKind.LOAD_ONLY

    # i_f' = alpha v + beta i_f + gamma e after the converter feedback
    @property
    def alpha(self) -> float:
        return (self.gains.k_alpha - 1.0) / self.filter.l_f

    @property
    def beta(self) -> float:
        return (self.gains.k_beta - self.filter.r_f) / self.filter.l_f

    @property
    def gamma(self) -> float:
        return self.gains.k_gamma / self.filter.l_f


@dataclass(frozen=True)
class LineSpec:
    from_node: int
    to_node: int
    r_pi: float
    l_pi: float
    c_pi_half: float = 0.0


@dataclass(frozen=True)
class MicrogridSpec:
    nodes: tuple
    lines: tuple
    v_ref: float
    kappa: float
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "lines", tuple(self.lines))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.lines)

    @property
    def dgu_nodes(self) -> list:
        """Node indices carrying a DGU, grid-forming first."""
        gf = [k for k, nd in enumerate(self.nodes) if nd.kind is NodeKind.GRID_FORMING]
        return gf[:1] + self.follower_nodes

    @property
    def follower_nodes(self) -> list:
        return [k for k, nd in enumerate(self.nodes) if nd.kind is NodeKind.GRID_FOLLOWING]

    @property
    def d(self) -> int:
        return len(self.dgu_nodes)

    def with_loads(self, loads: Sequence[ZipLoad]) -> "MicrogridSpec":
        if len(loads) != self.n:
            raise ValueError(f"expected {self.n} loads, got {len(loads)}")
        nodes = [_replace(nd, load=ld) for nd, ld in zip(self.nodes, loads)]
        return MicrogridSpec(nodes, self.lines, self.v_ref, self.kappa, self.name)

    def effective_capacitance(self) -> np.ndarray:
        """Node capacitances with the line shunt halves folded in."""
        c = np.array([nd.c_f for nd in self.nodes], dtype=float)
        for ln in self.lines:
            c[ln.from_node] += ln.c_pi_half
            c[ln.to_node] += ln.c_pi_half
        return c


def _replace(obj, **changes):
    from dataclasses import replace

    return replace(obj, **changes)


@dataclass(frozen=True)
class TieLine:
    mg_a: int
    node_a: int
    mg_b: int
    node_b: int
    r_pi: float
    l_pi: float


@dataclass(frozen=True)
class ConsensusSpec:
    laplacian: np.ndarray
    mu: float = 1e-2


@dataclass(frozen=True)
class NetworkSpec:
    microgrids: tuple
    tie_lines: tuple = ()
    consensus: Optional[ConsensusSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "microgrids", tuple(self.microgrids))
        object.__setattr__(self, "tie_lines", tuple(self.tie_lines))


class ValidationError(ValueError):
    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


def build_incidence(spec: MicrogridSpec) -> np.ndarray:
    """Node-by-line incidence: -1 where a line leaves a node, +1 where it enters."""
    m = np.zeros((spec.n, spec.l))
    for j, ln in enumerate(spec.lines):
        for node in (ln.from_node, ln.to_node):
            if not 0 <= node < spec.n:
                raise ValidationError([f"lines[{j}]: endpoint {node} does not exist"])
        m[ln.from_node, j] = -1.0
        m[ln.to_node, j] = 1.0
    return m


def _connected(n: int, edges) -> bool:
    if n == 0:
        return False
    adj = {k: set() for k in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = {0}, [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


def validate(spec: MicrogridSpec) -> list:
    """List of violated structural rules (empty when the description is usable)."""
    out = []
    n_gf = sum(nd.kind is NodeKind.GRID_FORMING for nd in spec.nodes)
    if n_gf != 1:
        out.append(f"nodes: exactly one grid-forming DGU required, found {n_gf}")
    if not (np.isfinite(spec.v_ref) and spec.v_ref > 0):
        out.append("v_ref: must be positive")
    if not (np.isfinite(spec.kappa) and spec.kappa > 0):
        out.append("kappa: must be positive")
    for k, nd in enumerate(spec.nodes):
        where = f"nodes[{k}]"
        ld = nd.load
        if not np.isfinite([ld.y, ld.p, ld.i_hat]).all():
            out.append(f"{where}.load: all fields must be finite")
        if ld.y < 0:
            out.append(f"{where}.load.y: must be >= 0")
        if not nd.c_f > 0:
            out.append(f"{where}.c_f: must be > 0")
        if nd.has_dgu:
            if nd.filter is None or nd.gains is None:
                out.append(f"{where}: filter and gains required for a DGU node")
            else:
                if not (nd.filter.l_f > 0 and nd.filter.r_f > 0):
                    out.append(f"{where}.filter: l_f > 0 and r_f > 0 required")
                elif not np.isfinite([nd.alpha, nd.beta, nd.gamma]).all():
                    out.append(f"{where}.gains: derived alpha/beta/gamma must be finite")
        elif nd.filter is not None or nd.gains is not None:
            out.append(f"{where}: load-only node must not carry filter or gains")
        if nd.kind is NodeKind.GRID_FOLLOWING:
            if nd.cost is None:
                out.append(f"{where}.cost: required for a grid-following DGU")
            elif not nd.cost.q > 0:
                out.append(f"{where}.cost: q > 0 required")
            if nd.tau is None or not nd.tau > 0:
                out.append(f"{where}.tau: tau > 0 required for a grid-following DGU")
        elif nd.cost is not None or nd.tau is not None:
            out.append(f"{where}: cost and tau only allowed on grid-following DGUs")
    endpoints_ok = True
    for j, ln in enumerate(spec.lines):
        if not (0 <= ln.from_node < spec.n and 0 <= ln.to_node < spec.n):
            out.append(f"lines[{j}]: endpoint does not exist")
            endpoints_ok = False
            continue
        if ln.from_node == ln.to_node:
            out.append(f"lines[{j}]: from and to must differ")
        if not (ln.r_pi > 0 and ln.l_pi > 0):
            out.append(f"lines[{j}]: r_pi > 0 and l_pi > 0 required")
        if ln.c_pi_half < 0:
            out.append(f"lines[{j}].c_pi_half: must be >= 0")
    if endpoints_ok and not _connected(spec.n, [(ln.from_node, ln.to_node) for ln in spec.lines]):
        out.append("lines: graph connected required")
    return out


def check(spec: MicrogridSpec) -> MicrogridSpec:
    """Raise ``ValidationError`` on violations; warn when DGU order was rewritten."""
    problems = validate(spec)
    if problems:
        raise ValidationError(problems)
    dgu_in_node_order = [k for k, nd in enumerate(spec.nodes) if nd.has_dgu]
    if dgu_in_node_order != spec.dgu_nodes:
        log.warning(
            "microgrid %r: grid-forming DGU at node %d re-indexed to DGU 1",
            spec.name,
            spec.dgu_nodes[0],
        )
    return spec


def validate_network(net: NetworkSpec) -> list:
    out = []
    for k, mg in enumerate(net.microgrids):
        out += [f"microgrids[{k}].{msg}" for msg in validate(mg)]
    m = len(net.microgrids)
    for j, tl in enumerate(net.tie_lines):
        for mg, node in ((tl.mg_a, tl.node_a), (tl.mg_b, tl.node_b)):
            if not 0 <= mg < m or not 0 <= node < net.microgrids[mg].n:
                out.append(f"tie_lines[{j}]: endpoint ({mg}, {node}) does not exist")
        if tl.mg_a == tl.mg_b:
            out.append(f"tie_lines[{j}]: must join two different microgrids")
        if not (tl.r_pi > 0 and tl.l_pi > 0):
            out.append(f"tie_lines[{j}]: r_pi > 0 and l_pi > 0 required")
    if net.consensus is not None:
        from .consensus import check_laplacian

        lap = np.asarray(net.consensus.laplacian, dtype=float)
        if lap.shape != (m, m):
            out.append(f"consensus.laplacian: expected {m}x{m}")
        else:
            try:
                check_laplacian(lap)
            except ValueError as exc:
                out.append(f"consensus.laplacian: {exc}")
        if not net.consensus.mu > 0:
            out.append("consensus.mu: must be > 0")
    return out


@dataclass(frozen=True)
class StateView:
    v: np.ndarray
    i_f: np.ndarray
    e: np.ndarray
    i_pi: np.ndarray
    p_ref: np.ndarray
    lam: float


@dataclass(frozen=True)
class StateLayout:
    n: int
    d: int
    l: int  # noqa: E741
    offsets: dict = field(init=False)

    SEGMENTS = ("v", "i_f", "e", "i_pi", "p_ref", "lam")

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("at least one DGU (the grid-forming one) is required")
        sizes = self.sizes()
        offs, pos = {}, 0
        for name in self.SEGMENTS:
            offs[name] = slice(pos, pos + sizes[name])
            pos += sizes[name]
        object.__setattr__(self, "offsets", offs)

    def sizes(self) -> dict:
        return {"v": self.n, "i_f": self.d, "e": self.d, "i_pi": self.l, "p_ref": self.d - 1, "lam": 1}

    @property
    def dim(self) -> int:
        return self.n + 3 * self.d + self.l

    def __getitem__(self, name: str) -> slice:
        return self.offsets[name]

    def pack(self, v, i_f, e, i_pi, p_ref, lam) -> np.ndarray:
        parts = dict(v=v, i_f=i_f, e=e, i_pi=i_pi, p_ref=p_ref, lam=np.atleast_1d(lam))
        x = np.empty(self.dim)
        for name, size in self.sizes().items():
            arr = np.asarray(parts[name], dtype=float).reshape(-1)
            if arr.size != size:
                raise ValueError(f"segment {name}: expected {size} entries, got {arr.size}")
            x[self.offsets[name]] = arr
        return x

    def unpack(self, x) -> StateView:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"state has shape {x.shape}, layout needs ({self.dim},)")
        o = self.offsets
        return StateView(
            v=x[o["v"]].copy(),
            i_f=x[o["i_f"]].copy(),
            e=x[o["e"]].copy(),
            i_pi=x[o["i_pi"]].copy(),
            p_ref=x[o["p_ref"]].copy(),
            lam=float(x[o["lam"]][0]),
        )


def layout(spec: MicrogridSpec) -> StateLayout:
    return StateLayout(spec.n, spec.d, spec.l)


def selector_matrices(spec: MicrogridSpec):
    """``(I_f, I_v, I_p, E)``: node-from-DGU map, grid-forming / follower
    selectors on the DGU index, and the (d x d-1) embedding of ``p_ref``."""
    d = spec.d
    i_f = np.zeros((spec.n, d))
    for k, node in enumerate(spec.dgu_nodes):
        i_f[node, k] = 1.0
    i_v = np.zeros((d, d))
    i_v[0, 0] = 1.0
    i_p = np.eye(d) - i_v
    emb = np.zeros((d, d - 1))
    emb[1:, :] = np.eye(d - 1)
    return i_f, i_v, i_p, emb
