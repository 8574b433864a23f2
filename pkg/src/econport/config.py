"""JSON network configs: parsing, defaults and serialization.

Units are SI throughout. Node and line endpoints use the node ``id`` labels
of the config; internally nodes are indexed by their position in the list.
Unknown keys anywhere raise :class:`ConfigError`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .consensus import path_laplacian
from .model import (
    ConsensusSpec,
    Filter,
    Gains,
    LineSpec,
    MicrogridSpec,
    NetworkSpec,
    NodeKind,
    NodeSpec,
    TieLine,
    ZipLoad,
    validate_network,
)
from .pricing import QuadraticCost

# representative converter/line values; not taken from any measured system
DEFAULT_C_F = 2.2e-3
DEFAULT_L_F = 1.8e-3
DEFAULT_R_F = 0.2
DEFAULT_R_PI = 70e-3
DEFAULT_L_PI = 2.0e-6
DEFAULT_MU = 1e-2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LoadStep:
    time: float
    microgrid: int
    node: int
    load: ZipLoad


@dataclass(frozen=True)
class Scenario:
    network: NetworkSpec
    schedule: tuple = ()
    horizon: Optional[float] = None
    description: str = ""


def _keys(obj, allowed, where, required=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(obj) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(f"{where}: missing key(s) {missing}")


def _num(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}: missing {key!r}")
        return float(default)
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number")
    return float(val)


def _load(obj, where) -> ZipLoad:
    obj = obj or {}
    _keys(obj, ("y", "p", "i_hat"), where)
    return ZipLoad(_num(obj, "y", where, 0.0), _num(obj, "p", where, 0.0), _num(obj, "i_hat", where, 0.0))


def _node(obj, where) -> NodeSpec:
    _keys(obj, ("id", "kind", "c_f", "load", "filter", "gains", "cost", "tau"), where, ("id", "kind"))
    try:
        kind = NodeKind(obj["kind"])
    except ValueError:
        raise ConfigError(f"{where}.kind: one of {[k.value for k in NodeKind]}") from None
    filt = gains = cost = None
    tau = None
    if kind is not NodeKind.LOAD_ONLY:
        fo = obj.get("filter", {})
        _keys(fo, ("l_f", "r_f"), f"{where}.filter")
        filt = Filter(_num(fo, "l_f", where, DEFAULT_L_F), _num(fo, "r_f", where, DEFAULT_R_F))
        go = obj.get("gains")
        if go is None:
            raise ConfigError(f"{where}: DGU nodes need 'gains'")
        _keys(go, ("k_alpha", "k_beta", "k_gamma"), f"{where}.gains", ("k_alpha", "k_beta", "k_gamma"))
        gains = Gains(go["k_alpha"], go["k_beta"], go["k_gamma"])
    else:
        for key in ("filter", "gains"):
            if key in obj:
                raise ConfigError(f"{where}.{key}: not allowed on a load-only node")
    if kind is NodeKind.GRID_FOLLOWING:
        co = obj.get("cost")
        if co is None:
            raise ConfigError(f"{where}: grid-following nodes need 'cost'")
        _keys(co, ("q", "r", "s"), f"{where}.cost", ("q",))
        cost = QuadraticCost(_num(co, "q", where), _num(co, "r", where, 0.0), _num(co, "s", where, 0.0))
        tau = _num(obj, "tau", where)
    else:
        for key in ("cost", "tau"):
            if key in obj:
                raise ConfigError(f"{where}.{key}: only allowed on grid-following nodes")
    return NodeSpec(
        kind=kind,
        c_f=_num(obj, "c_f", where, DEFAULT_C_F),
        load=_load(obj.get("load"), f"{where}.load"),
        filter=filt,
        gains=gains,
        cost=cost,
        tau=tau,
        label=str(obj["id"]),
    )


def _microgrid(obj, where):
    _keys(obj, ("name", "v_ref", "kappa", "nodes", "lines"), where, ("v_ref", "kappa", "nodes"))
    nodes = [_node(nd, f"{where}.nodes[{k}]") for k, nd in enumerate(obj["nodes"])]
    ids = {nd.label: k for k, nd in enumerate(nodes)}
    if len(ids) != len(nodes):
        raise ConfigError(f"{where}.nodes: duplicate id")
    lines = []
    for j, lo in enumerate(obj.get("lines", [])):
        lw = f"{where}.lines[{j}]"
        _keys(lo, ("from", "to", "r_pi", "l_pi", "c_pi_half"), lw, ("from", "to"))
        try:
            a, b = ids[str(lo["from"])], ids[str(lo["to"])]
        except KeyError as exc:
            raise ConfigError(f"{lw}: unknown node id {exc.args[0]}") from None
        lines.append(
            LineSpec(a, b, _num(lo, "r_pi", lw, DEFAULT_R_PI), _num(lo, "l_pi", lw, DEFAULT_L_PI), _num(lo, "c_pi_half", lw, 0.0))
        )
    name = str(obj.get("name", where))
    return MicrogridSpec(nodes, lines, _num(obj, "v_ref", where), _num(obj, "kappa", where), name), ids


def parse_scenario(data: dict) -> Scenario:
    _keys(data, ("description", "microgrids", "tie_lines", "consensus", "schedule", "horizon"), "config", ("microgrids",))
    mgs, id_maps = [], []
    for k, mo in enumerate(data["microgrids"]):
        mg, ids = _microgrid(mo, f"microgrids[{k}]")
        mgs.append(mg)
        id_maps.append(ids)
    names = {mg.name: k for k, mg in enumerate(mgs)}

    def mg_index(val, where):
        if isinstance(val, int) and not isinstance(val, bool) and 0 <= val < len(mgs):
            return val
        if isinstance(val, str) and val in names:
            return names[val]
        raise ConfigError(f"{where}: unknown microgrid {val!r}")

    def node_index(mg, val, where):
        try:
            return id_maps[mg][str(val)]
        except KeyError:
            raise ConfigError(f"{where}: unknown node id {val!r}") from None

    ties = []
    for j, to in enumerate(data.get("tie_lines", [])):
        tw = f"tie_lines[{j}]"
        _keys(to, ("mg_a", "node_a", "mg_b", "node_b", "r_pi", "l_pi"), tw, ("mg_a", "node_a", "mg_b", "node_b"))
        a, b = mg_index(to["mg_a"], tw), mg_index(to["mg_b"], tw)
        ties.append(
            TieLine(a, node_index(a, to["node_a"], tw), b, node_index(b, to["node_b"], tw),
                    _num(to, "r_pi", tw, DEFAULT_R_PI), _num(to, "l_pi", tw, DEFAULT_L_PI))
        )
    cons = None
    if data.get("consensus") is not None:
        co = data["consensus"]
        _keys(co, ("laplacian", "mu", "weight"), "consensus")
        if "laplacian" in co:
            lap = np.array(co["laplacian"], dtype=float)
        else:
            lap = path_laplacian(len(mgs), _num(co, "weight", "consensus", 1.0))
        cons = ConsensusSpec(lap, _num(co, "mu", "consensus", DEFAULT_MU))
    net = NetworkSpec(mgs, ties, cons)
    problems = validate_network(net)
    if problems:
        raise ConfigError("; ".join(problems))
    steps = []
    for j, so in enumerate(data.get("schedule", [])):
        sw = f"schedule[{j}]"
        _keys(so, ("time", "microgrid", "loads"), sw, ("time", "microgrid", "loads"))
        mg = mg_index(so["microgrid"], sw)
        if not isinstance(so["loads"], dict):
            raise ConfigError(f"{sw}.loads: expected an object keyed by node id")
        for nid, lo in so["loads"].items():
            steps.append(LoadStep(_num(so, "time", sw), mg, node_index(mg, nid, sw), _load(lo, f"{sw}.loads.{nid}")))
    steps.sort(key=lambda s: s.time)
    horizon = _num(data, "horizon", "config") if "horizon" in data else None
    return Scenario(net, tuple(steps), horizon, str(data.get("description", "")))


def load_scenario(path) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_scenario(data)


def load_network(path) -> NetworkSpec:
    return load_scenario(path).network
