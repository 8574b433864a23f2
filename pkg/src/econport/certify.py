"""Vertex LMIs for stability and port passivity, an SDP solver and an independent verifier.

The solver (cvxpy) proposes ``S`` (and the passivity indices); the verifier
recomputes every vertex matrix and its spectrum with the in-repo Jacobi
routine and is the only authority on pass/fail.

Port kinds carry a zero diagonal block for the electric inputs, so they are
checked as ``S B_ext = C_ext^T`` (enforced exactly) plus strict negativity of
the remaining matrix.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import Envelope, PortMatrices, ShiftedSystem
from .numerics.eig import eig_sym

DEFAULT_VERTEX_CAP = 24
DEFAULT_EPS = 1e-6


class Kind(enum.Enum):
    STABILITY = "stability"
    ELECTRIC_EIP = "electric"
    ECON_IFOFP = "econ"


class VertexCapError(ValueError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} nondegenerate parameters give 2^{count} vertices; cap is {cap} parameters")
        self.count = count
        self.cap = cap


@dataclass
class Certificate:
    kind: Kind
    S: np.ndarray
    nu: float
    rho: float
    margin: float
    envelope: Envelope
    port_nodes: tuple = ()
    system_hash: str = ""
    vertex_margins: list = field(default_factory=list)
    _passed: bool = field(default=False, repr=False, compare=False)
    _worst: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "S": self.S.tolist(),
            "nu": self.nu,
            "rho": self.rho,
            "margin": self.margin,
            "vertex_margins": list(self.vertex_margins),
            "envelope": self.envelope.to_dict(),
            "port_nodes": list(self.port_nodes),
            "system_hash": self.system_hash,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "Certificate":
        keys = {"kind", "S", "nu", "rho", "margin", "vertex_margins", "envelope", "port_nodes", "system_hash"}
        extra = set(data) - keys
        if extra:
            raise ValueError(f"certificate: unknown key(s) {sorted(extra)}")
        env = data["envelope"]
        return cls(
            kind=Kind(data["kind"]),
            S=np.array(data["S"], dtype=float),
            nu=float(data["nu"]),
            rho=float(data["rho"]),
            margin=float(data["margin"]),
            envelope=Envelope(**{k: _tuplify(v) for k, v in env.items()}),
            port_nodes=tuple(int(k) for k in data.get("port_nodes", ())),
            system_hash=str(data.get("system_hash", "")),
            vertex_margins=[float(m) for m in data.get("vertex_margins", [])],
        )


def _tuplify(val):
    if isinstance(val, list):
        return tuple(_tuplify(v) for v in val)
    return val


@dataclass
class InfeasibleReport:
    kind: Kind
    best_margin: float
    worst_vertex: dict
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "feasible": False,
            "best_margin": self.best_margin,
            "worst_vertex": self.worst_vertex,
            "message": self.message,
        }


@dataclass
class VerificationReport:
    passed: bool
    margin: float
    vertex_margins: list
    min_eig_S: float
    port_residual: float
    worst_vertex: dict

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "margin": self.margin,
            "vertex_margins": list(self.vertex_margins),
            "min_eig_S": self.min_eig_S,
            "port_residual": self.port_residual,
            "worst_vertex": self.worst_vertex,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def system_hash(shifted: ShiftedSystem, ports: Optional[PortMatrices] = None) -> str:
    """Digest of everything the vertex matrices depend on."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(shifted.a0).tobytes())
    for prm in shifted.params:
        h.update(prm.name.encode())
        h.update(np.array([prm.lo, prm.hi]).tobytes())
        h.update(np.ascontiguousarray(prm.coeff).tobytes())
    if ports is not None:
        for arr in (ports.B_ext, ports.C_ext, ports.b_econ, ports.c_econ):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def enumerate_vertices(shifted: ShiftedSystem, cap: int = DEFAULT_VERTEX_CAP):
    """Corners of the parameter box; degenerate intervals were already folded away."""
    m = len(shifted.params)
    if m > cap:
        raise VertexCapError(m, cap)
    return shifted.vertices()


def assemble_lmi(kind, A, S, ports: Optional[PortMatrices] = None, nu: float = 0.0, rho: float = 0.0):
    """Full block matrix whose negative definiteness is the certificate condition.

    Electric-port inputs contribute a zero diagonal block; the economic input
    gets ``nu`` on its diagonal and ``rho`` weights the price output.
    """
    kind = Kind(kind)
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    X = A.T @ S + S @ A
    if kind is Kind.STABILITY:
        return X
    if ports is None:
        raise ValueError(f"{kind.value} certificate needs port matrices")
    blocks = [S @ ports.B_ext - ports.C_ext.T]
    if kind is Kind.ECON_IFOFP:
        c = ports.c_econ
        X = X + rho * np.outer(c, c)
        blocks.append((S @ ports.b_econ - c)[:, None])
    off = np.hstack(blocks) if blocks else np.zeros((A.shape[0], 0))
    corner = np.zeros((off.shape[1], off.shape[1]))
    if kind is Kind.ECON_IFOFP:
        corner[-1, -1] = nu
    return np.block([[X, off], [off.T, corner]])


def _reduced(kind: Kind, lmi: np.ndarray, n: int, z: int) -> np.ndarray:
    """Drop the electric-input rows/columns (their block must vanish identically)."""
    if kind is Kind.STABILITY or z == 0:
        return lmi
    keep = list(range(n)) + list(range(n + z, lmi.shape[0]))
    return lmi[np.ix_(keep, keep)]


def _vertex_dict(shifted: ShiftedSystem, values) -> dict:
    return {prm.name: float(v) for prm, v in zip(shifted.params, values)}


def verify_certificate(
    cert: Certificate,
    shifted: ShiftedSystem,
    ports: Optional[PortMatrices] = None,
    eps: float = DEFAULT_EPS,
    port_tol: float = 1e-12,
    workers: int = 4,
    cap: int = DEFAULT_VERTEX_CAP,
) -> VerificationReport:
    """Recompute every vertex LMI with the Jacobi eigensolver.

    Passes iff ``lambda_min(S) > 0``, the electric port equality holds to
    ``port_tol`` (relative to ``max|S|``) and every vertex margin is ``<= -eps``.
    Vertex results are gathered in enumeration order, so the report does
    not depend on ``workers``.
    """
    kind = Kind(cert.kind)
    S = np.asarray(cert.S, dtype=float)
    n = shifted.dim
    if S.shape != (n, n):
        raise ValueError(f"certificate S is {S.shape}, system has dimension {n}")
    z = 0 if ports is None else ports.B_ext.shape[1]
    vertices = list(enumerate_vertices(shifted, cap))

    def one(values):
        lmi = assemble_lmi(kind, shifted.assemble(values), S, ports, cert.nu, cert.rho)
        return float(eig_sym(_reduced(kind, lmi, n, z))[-1])

    if workers > 1 and len(vertices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            margins = list(pool.map(one, vertices))
    else:
        margins = [one(v) for v in vertices]
    s_min = float(eig_sym(S)[0])
    if kind is Kind.STABILITY or z == 0:
        port_res = 0.0
    else:
        port_res = float(np.abs(S @ ports.B_ext - ports.C_ext.T).max() / max(1.0, np.abs(S).max()))
    worst = int(np.argmax(margins))
    margin = margins[worst]
    passed = bool(s_min > 0 and margin <= -eps and port_res <= port_tol)
    return VerificationReport(passed, margin, margins, s_min, port_res, _vertex_dict(shifted, vertices[worst]))


@dataclass(frozen=True)
class SolverOptions:
    eps: float = DEFAULT_EPS
    cap: int = DEFAULT_VERTEX_CAP
    solver: str = "CLARABEL"
    # lower bound on lambda_min(S); relative to the pinned port entries for port kinds
    s_floor: float = 1e-6
    # indices are kept in [-index_bound, index_bound]
    index_bound: float = 1e6


def _scaling(shifted: ShiftedSystem, sweeps: int = 50) -> np.ndarray:
    """Diagonal ``d`` such that ``D^-1 A D`` has matching row and column norms (nominal ``A``)."""
    a = np.abs(shifted.assemble([0.5 * (p.lo + p.hi) for p in shifted.params]))
    np.fill_diagonal(a, 0.0)
    d = np.ones(a.shape[0])
    for _ in range(sweeps):
        b = a * d[None, :] / d[:, None]
        r, c = b.sum(axis=1), b.sum(axis=0)
        ok = (r > 0) & (c > 0)
        f = np.ones_like(d)
        f[ok] = np.clip(np.sqrt(r[ok] / c[ok]), 0.5, 2.0)
        d *= f
        if np.all(np.abs(f - 1.0) < 1e-3):
            break
    return d / np.exp(np.mean(np.log(d)))


def solve_certificate(
    shifted: ShiftedSystem,
    ports: Optional[PortMatrices] = None,
    kind=Kind.STABILITY,
    options: Optional[SolverOptions] = None,
):
    """Search ``S`` (and ``nu``, ``rho``) by semidefinite programming.

    Stability minimizes the worst vertex eigenvalue under ``trace(S) = N``.
    The port kinds pin the port columns of ``S`` so that ``S B_ext = C_ext^T``
    and require a margin of ``10 eps``; the economic port then maximizes
    ``nu + rho``. Returns a verified :class:`Certificate`, otherwise an
    :class:`InfeasibleReport` with the best margin found.
    """
    kind = Kind(kind)
    opts = options or SolverOptions()
    if kind is not Kind.STABILITY and ports is None:
        raise ValueError(f"{kind.value} certificate needs port matrices")
    vertices = list(enumerate_vertices(shifted, opts.cap))
    mats = [shifted.assemble(v) for v in vertices]
    port_arg = ports if kind is not Kind.STABILITY else None

    status, cand = _sdp(kind, mats, shifted, port_arg, opts, relaxed=False)
    if cand is not None:
        cert = _certificate(kind, cand, shifted, port_arg, opts)
        if cert._passed:
            return cert
        return InfeasibleReport(kind, cert.margin, cert._worst, f"solver status {status}; verifier rejected the candidate")
    # no strict solution: report the best achievable margin instead
    status_r, cand = _sdp(kind, mats, shifted, port_arg, opts, relaxed=True)
    if cand is None:
        return InfeasibleReport(kind, math.inf, {}, f"solver status {status}; relaxed problem {status_r}")
    cert = _certificate(kind, cand, shifted, port_arg, opts)
    return InfeasibleReport(kind, cert.margin, cert._worst, f"solver status {status}; best margin from the relaxed problem")


def _certificate(kind, cand, shifted, ports, opts) -> Certificate:
    S, nu, rho = cand
    nodes = tuple(ports.nodes) if ports is not None else ()
    cert = Certificate(kind, S, nu, rho, math.nan, shifted.envelope, nodes, system_hash(shifted, ports))
    report = verify_certificate(cert, shifted, ports, eps=opts.eps, cap=opts.cap)
    cert.margin = report.margin
    cert.vertex_margins = report.vertex_margins
    cert._passed = report.passed
    cert._worst = report.worst_vertex
    return cert


def _sdp(kind, mats, shifted, ports, opts, relaxed):
    import cvxpy as cp

    n = shifted.dim
    z = 0 if ports is None else ports.B_ext.shape[1]
    # balanced coordinates x = D y: A_y = D^-1 A D and S = D^-1 S_y D^-1
    d = _scaling(shifted)
    D, Dinv = np.diag(d), np.diag(1.0 / d)
    S_y = cp.Variable((n, n), symmetric=True)
    t = cp.Variable()
    econ = kind is Kind.ECON_IFOFP
    nu = cp.Variable() if econ else None
    rho = cp.Variable() if econ else None

    # S >= floor I in original coordinates, below the entries pinned by the ports
    floor = opts.s_floor
    if z:
        floor *= float(np.min(1.0 / np.abs(ports.B_ext).max(axis=0)))
    cons = [S_y >> floor * np.diag(d**2)]
    trace_x = cp.sum(cp.multiply(cp.diag(S_y), 1.0 / d**2))
    if kind is Kind.STABILITY:
        cons.append(trace_x == n)
    for j in range(z):
        cons.append(S_y @ (Dinv @ ports.B_ext[:, j]) == D @ ports.C_ext[j])
    # M_x = T M_y T with T = diag(1/d, 1), so M_y <= t T^-2 gives lambda_max(M_x) <= t
    for a in mats:
        ay = Dinv @ a @ D
        X = ay.T @ S_y + S_y @ ay
        weight = d**2
        if econ:
            cy = D @ ports.c_econ
            X = X + rho * np.outer(cy, cy)
            off = S_y @ (Dinv @ ports.b_econ)[:, None] - cy[:, None]
            X = cp.bmat([[X, off], [off.T, cp.reshape(nu, (1, 1), order="C")]])
            weight = np.append(weight, 1.0)
        cons.append((X + X.T) / 2 << t * np.diag(weight))
    if econ:
        cons += [cp.abs(nu) <= opts.index_bound, cp.abs(rho) <= opts.index_bound]
    if kind is Kind.STABILITY:
        obj = cp.Minimize(t)
    elif relaxed:
        # pinned columns do not fix the scale of the rest; bound it
        pinned = float(np.max(1.0 / np.abs(ports.B_ext).max(axis=0))) if z else 1.0
        cons.append(trace_x <= n * max(1.0, pinned))
        obj = cp.Minimize(t)
    else:
        cons.append(t <= -10.0 * opts.eps)
        obj = cp.Maximize(nu + rho) if econ else cp.Minimize(trace_x)
    prob = cp.Problem(obj, cons)
    try:
        prob.solve(solver=opts.solver)
    except cp.error.SolverError:
        return "solver error", None
    if S_y.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
        return prob.status, None
    S = Dinv @ S_y.value @ Dinv
    S = 0.5 * (S + S.T)
    if kind is Kind.STABILITY:
        S *= n / np.trace(S)
    for j in range(z):
        # enforce S B = C^T exactly: column k of S is C_k e_k
        k = int(np.flatnonzero(ports.C_ext[j])[0])
        S[:, k] = 0.0
        S[k, :] = 0.0
        S[k, k] = 1.0 / ports.B_ext[k, j]
    nu_v = float(nu.value) if econ else 0.0
    rho_v = float(rho.value) if econ else 0.0
    return prob.status, (S, nu_v, rho_v)


def storage_rate(cert: Certificate, x_tilde, x_dot) -> float:
    """``d/dt (xt^T S xt)`` along a trajectory with velocity ``x_dot``."""
    x_tilde = np.asarray(x_tilde, dtype=float)
    return float(2.0 * x_tilde @ cert.S @ np.asarray(x_dot, dtype=float))


def supply_rate(cert: Certificate, v_port, i_port, lam_glob, lam_loc) -> float:
    """Supply rate implied by the certificate's block matrix (all arguments in deviations).

    The off-diagonal blocks ``S B - C^T`` count each cross term twice, so the
    certified inequality is ``V' <= 2 (v^T i + lam_glob lam_loc) - nu lam_glob^2 - rho lam_loc^2``.
    """
    cross = float(np.dot(np.atleast_1d(v_port), np.atleast_1d(i_port)))
    return 2.0 * (cross + lam_glob * lam_loc) - cert.nu * lam_glob**2 - cert.rho * lam_loc**2
