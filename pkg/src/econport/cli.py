"""Command line entry point: simulate, certify, dispatch, verify-cert.

Exit codes: 0 ok, 2 config error, 3 integration failure, 4 infeasible or
failed verification, 5 vertex cap exceeded. ``ECONPORT_DIGITS`` sets the
significant digits of CSV/summary output (default 9).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .certify import (
    Certificate,
    InfeasibleReport,
    Kind,
    SolverOptions,
    VertexCapError,
    solve_certificate,
    system_hash,
    verify_certificate,
)
from .config import ConfigError, Scenario, load_scenario
from .dynamics import Envelope, NoEquilibriumError, SingularLoadError, affine_factorization, port_matrices
from .model import ValidationError
from .numerics.ode import IntegrationError, IntegratorConfig
from .pricing import dispatch_oracle
from .sim import Regime, ScenarioError, run_scenario
from .svg import line_chart

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_INFEASIBLE = 4
EXIT_VERTEX_CAP = 5

DIGITS_ENV = "ECONPORT_DIGITS"

log = logging.getLogger("econport")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def digits() -> int:
    raw = os.environ.get(DIGITS_ENV, "9")
    try:
        val = int(raw)
    except ValueError:
        raise CliError(f"{DIGITS_ENV} must be an integer, got {raw!r}", EXIT_CONFIG) from None
    if not 1 <= val <= 17:
        raise CliError(f"{DIGITS_ENV} must be in 1..17, got {val}", EXIT_CONFIG)
    return val


def fmt(x: float, nd: int) -> str:
    return f"{x:.{nd}g}"


def rounded(obj, nd: int):
    """Round every float in a JSON-like structure to ``nd`` significant digits."""
    if isinstance(obj, float):
        return float(fmt(obj, nd)) if np.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: rounded(v, nd) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v, nd) for v in obj]
    if isinstance(obj, np.ndarray):
        return rounded(obj.tolist(), nd)
    if isinstance(obj, np.generic):
        return rounded(obj.item(), nd)
    return obj


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_path: str
    config_sha256: str
    command: str
    arguments: dict
    outputs: list = field(default_factory=list)
    deterministic: bool = True
    version: str = __version__

    def add(self, path: Path, root: Path) -> None:
        self.outputs.append({"path": str(Path(path).relative_to(root)), "sha256": sha256_file(path)})

    def write(self, path: Path) -> None:
        data = {
            "config_path": self.config_path,
            "config_sha256": self.config_sha256,
            "command": self.command,
            "arguments": self.arguments,
            "deterministic": self.deterministic,
            "version": self.version,
            "outputs": self.outputs,
        }
        write_json(path, data)


def write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, header, columns, nd: int) -> None:
    cols = [np.asarray(c, dtype=float) for c in columns]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(fmt(v, nd) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _scenario(path) -> Scenario:
    try:
        return load_scenario(path)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file", EXIT_CONFIG) from None
    except (ConfigError, ValidationError, ValueError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def _microgrid(scenario: Scenario, name):
    mgs = scenario.network.microgrids
    if name is None:
        return 0, mgs[0]
    for k, mg in enumerate(mgs):
        if mg.name == name:
            return k, mg
    raise CliError(f"no microgrid named {name!r}; have {[mg.name for mg in mgs]}", EXIT_CONFIG)


def _node_index(mg, label: str) -> int:
    for k, nd in enumerate(mg.nodes):
        if nd.label == str(label):
            return k
    raise CliError(f"microgrid {mg.name}: no node with id {label!r}", EXIT_CONFIG)


def load_envelope(path) -> Envelope:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"{path}: no such file", EXIT_CONFIG) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", EXIT_CONFIG) from None
    allowed = {"v_box", "i_box", "v_tilde_box", "i_tilde_box", "p_box"}
    if not isinstance(data, dict) or set(data) - allowed:
        raise CliError(f"{path}: envelope keys must be among {sorted(allowed)}", EXIT_CONFIG)

    def tup(v):
        return tuple(tup(x) for x in v) if isinstance(v, list) else float(v)

    return Envelope(**{k: tup(v) for k, v in data.items()})


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    nd = digits()
    scenario = _scenario(args.config)
    horizon = args.horizon or scenario.horizon
    if horizon is None:
        raise CliError("no horizon: set 'horizon' in the config or pass --horizon", EXIT_CONFIG)
    if args.sample_hz <= 0:
        raise CliError("--sample-hz must be positive", EXIT_CONFIG)
    cfg = IntegratorConfig(horizon=horizon, sample_dt=1.0 / args.sample_hz, rtol=args.rtol, atol=args.atol)
    regime = Regime(args.regime)
    if regime is Regime.ECONOMIC and scenario.network.consensus is None:
        raise CliError("economic regime needs a 'consensus' section", EXIT_CONFIG)
    try:
        result = run_scenario(scenario.network, regime, scenario.schedule, cfg, window=args.window, tol=args.tol)
    except (IntegrationError, SingularLoadError, NoEquilibriumError) as exc:
        raise CliError(f"integration failed: {exc}", EXIT_INTEGRATION) from None
    except (ScenarioError, ValueError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(str(args.config), sha256_file(args.config), "simulate",
                           {"regime": regime.value, "sample_hz": args.sample_hz, "horizon": horizon,
                            "rtol": args.rtol, "atol": args.atol, "window": args.window, "tol": args.tol,
                            "svg": bool(args.svg), "digits": nd})
    cols = result.columns()
    path = out / "trajectory.csv"
    write_csv(path, [c[0] for c in cols], [c[2] for c in cols], nd)
    manifest.add(path, out)
    path = out / "trajectory.columns.json"
    write_json(path, [{"column": name, "unit": unit} for name, unit, _ in cols])
    manifest.add(path, out)

    figures = _figures(result)
    for name, (ylabel, series) in figures.items():
        path = out / f"{name}.csv"
        write_csv(path, ["t"] + list(series), [result.t] + list(series.values()), nd)
        manifest.add(path, out)
        if args.svg:
            path = out / f"{name}.svg"
            path.write_text(line_chart(result.t, series, f"{name} ({regime.value})", ylabel), encoding="utf-8")
            manifest.add(path, out)

    summary = {
        "regime": regime.value,
        "horizon": horizon,
        "samples": int(result.t.size),
        "steps": result.n_steps,
        "rejected_steps": result.n_rejected,
        "intervals": [s.to_dict() for s in result.intervals],
        "voltage_range": [min(float(s["v"].min()) for s in result.series),
                          max(float(s["v"].max()) for s in result.series)],
    }
    path = out / "summary.json"
    write_json(path, rounded(summary, nd))
    manifest.add(path, out)
    manifest.write(out / "manifest.json")
    for s in result.intervals:
        prices = ", ".join(fmt(p, 8) for p in s.end_metrics["external_price"])
        print(f"[{s.start:g}, {s.end:g}) s  steady={s.steady}  max rate {s.max_rate:.3e}  prices {prices}")
    return EXIT_OK


def _figures(result) -> dict:
    power, local, external = {}, {}, {}
    for mg, s in zip(result.model.net.microgrids, result.series):
        for j, node in enumerate(mg.dgu_nodes):
            power[f"{mg.name}.{mg.nodes[node].label}"] = s["power"][:, j]
        local[mg.name] = s["lam_loc"]
        external[mg.name] = s["lam_glob"]
    figs = {"power": ("W", power), "local_price": ("price", local)}
    if result.regime is Regime.ECONOMIC:
        figs["external_price"] = ("price", external)
    return figs


# ---------------------------------------------------------------------------
# certify / verify-cert


def _shifted(args, scenario, kind: Kind, envelope: Envelope, port_nodes):
    _, mg = _microgrid(scenario, args.microgrid)
    try:
        shifted = affine_factorization(mg, envelope, econ_open=kind is Kind.ECON_IFOFP)
        ports = port_matrices(mg, port_nodes) if kind is not Kind.STABILITY else None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    return mg, shifted, ports


def cmd_certify(args) -> int:
    scenario = _scenario(args.config)
    kind = Kind(args.kind)
    envelope = load_envelope(args.envelope)
    _, mg = _microgrid(scenario, args.microgrid)
    nodes = [_node_index(mg, label) for label in args.port_node]
    if kind is Kind.ELECTRIC_EIP and not nodes:
        raise CliError("electric certificates need at least one --port-node", EXIT_CONFIG)
    mg, shifted, ports = _shifted(args, scenario, kind, envelope, nodes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report_path = out.with_name(out.stem + ".report.json")
    manifest = RunManifest(str(args.config), sha256_file(args.config), "certify",
                           {"kind": kind.value, "envelope": str(args.envelope),
                            "envelope_sha256": sha256_file(args.envelope), "microgrid": mg.name,
                            "port_nodes": list(args.port_node), "cap": args.cap, "eps": args.eps})
    manifest_path = out.with_name(out.stem + ".manifest.json")
    opts = SolverOptions(eps=args.eps, cap=args.cap)
    try:
        result = solve_certificate(shifted, ports, kind, opts)
    except VertexCapError as exc:
        write_json(report_path, {"error": "vertex cap exceeded", "parameters": exc.count, "cap": exc.cap})
        manifest.add(report_path, out.parent)
        manifest.write(manifest_path)
        raise CliError(str(exc), EXIT_VERTEX_CAP) from None
    if isinstance(result, InfeasibleReport):
        write_json(report_path, result.to_dict())
        manifest.add(report_path, out.parent)
        manifest.write(manifest_path)
        print(f"infeasible: best margin {result.best_margin:.6e}; report in {report_path}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out.write_text(result.dumps(), encoding="utf-8")
    report = verify_certificate(result, shifted, ports, eps=args.eps, cap=args.cap)
    report_path.write_text(report.dumps(), encoding="utf-8")
    manifest.add(out, out.parent)
    manifest.add(report_path, out.parent)
    manifest.write(manifest_path)
    print(f"{kind.value} certificate: margin {report.margin:.6e}, {len(report.vertex_margins)} vertices, "
          f"passed={report.passed}")
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


def cmd_verify_cert(args) -> int:
    scenario = _scenario(args.config)
    try:
        cert = Certificate.from_dict(json.loads(Path(args.cert).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise CliError(f"{args.cert}: no such file", EXIT_CONFIG) from None
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        raise CliError(f"{args.cert}: not a certificate ({exc})", EXIT_CONFIG) from None
    mg, shifted, ports = _shifted(args, scenario, cert.kind, cert.envelope, cert.port_nodes)
    digest = system_hash(shifted, ports)
    if cert.system_hash and cert.system_hash != digest:
        raise CliError("certificate was issued for a different system (hash mismatch)", EXIT_CONFIG)
    try:
        report = verify_certificate(cert, shifted, ports, eps=args.eps, cap=args.cap)
    except VertexCapError as exc:
        raise CliError(str(exc), EXIT_VERTEX_CAP) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    text = report.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# dispatch


def cmd_dispatch(args) -> int:
    nd = digits()
    scenario = _scenario(args.config)
    mgs = scenario.network.microgrids if args.network else [_microgrid(scenario, args.microgrid)[1]]
    labels, costs = [], []
    for mg in mgs:
        for k in mg.follower_nodes:
            labels.append(f"{mg.name}.{mg.nodes[k].label}")
            costs.append(mg.nodes[k].cost)
    if not costs:
        raise CliError("no grid-following units to dispatch", EXIT_CONFIG)
    try:
        p, lam = dispatch_oracle(costs, args.total)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    for label, pk in zip(labels, p):
        print(f"p[{label}] = {fmt(pk, nd)}")
    print(f"lambda = {fmt(lam, nd)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="econport", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run a load-step scenario")
    sp.add_argument("config")
    sp.add_argument("--regime", choices=[r.value for r in Regime], default="electric")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sample-hz", type=float, default=100.0)
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--rtol", type=float, default=1e-10)
    sp.add_argument("--atol", type=float, default=1e-12)
    sp.add_argument("--window", type=float, default=1.0, help="steady-state window before each event [s]")
    sp.add_argument("--tol", type=float, default=1e-6, help="steady-state rate tolerance (normalized)")
    sp.add_argument("--svg", action="store_true", help="also write SVG line charts")
    sp.set_defaults(func=cmd_simulate)

    cp_ = sub.add_parser("certify", help="solve and verify a vertex-LMI certificate")
    cp_.add_argument("config")
    cp_.add_argument("--kind", choices=[k.value for k in Kind], default="stability")
    cp_.add_argument("--envelope", required=True)
    cp_.add_argument("--out", required=True)
    cp_.add_argument("--microgrid", default=None)
    cp_.add_argument("--port-node", action="append", default=[], help="node id of an electric port (repeatable)")
    cp_.add_argument("--cap", type=int, default=24, help="maximum number of box parameters")
    cp_.add_argument("--eps", type=float, default=1e-6)
    cp_.set_defaults(func=cmd_certify)

    vp = sub.add_parser("verify-cert", help="re-verify a certificate without solving")
    vp.add_argument("config")
    vp.add_argument("cert")
    vp.add_argument("--microgrid", default=None)
    vp.add_argument("--out", default=None)
    vp.add_argument("--cap", type=int, default=24)
    vp.add_argument("--eps", type=float, default=1e-6)
    vp.set_defaults(func=cmd_verify_cert)

    dp = sub.add_parser("dispatch", help="closed-form optimal dispatch of the followers")
    dp.add_argument("config")
    dp.add_argument("--total", type=float, required=True, help="total power to dispatch [W]")
    group = dp.add_mutually_exclusive_group()
    group.add_argument("--microgrid", default=None)
    group.add_argument("--network", action="store_true", help="dispatch all followers of all microgrids")
    dp.set_defaults(func=cmd_dispatch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    # solver chatter is not part of the output contract
    warnings.filterwarnings("ignore", module="cvxpy")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
