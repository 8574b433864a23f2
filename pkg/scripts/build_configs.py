"""Write the shipped configs under configs/ with pole-placement controller gains.

Run from the repository root: ``python scripts/build_configs.py``.
"""
import json
from pathlib import Path

from econport.config import DEFAULT_C_F, DEFAULT_L_F, DEFAULT_R_F

OUT = Path(__file__).resolve().parent.parent / "configs"
V_REF = 1000.0
KAPPA = 2000.0
TAU = 2.0


def grid_forming_gains(poles=(100.0, 150.0, 200.0), c=DEFAULT_C_F, l_f=DEFAULT_L_F, r_f=DEFAULT_R_F):
    """Place the (v, i_f, e) loop of an unloaded grid-forming node at -poles."""
    p1, p2, p3 = poles
    s1 = p1 + p2 + p3
    s2 = p1 * p2 + p1 * p3 + p2 * p3
    s3 = p1 * p2 * p3
    alpha, beta, gamma = -s2 * c, -s1, s3 * c
    return {"k_alpha": 1 + alpha * l_f, "k_beta": r_f + beta * l_f, "k_gamma": gamma * l_f}


def follower_gains(poles=(100.0, 150.0), v=V_REF, l_f=DEFAULT_L_F, r_f=DEFAULT_R_F):
    """Place the (i_f, e) power loop of a follower at -poles around v."""
    w1, w2 = poles
    beta, gamma = -(w1 + w2), w1 * w2 / v
    return {"k_alpha": 1.0, "k_beta": r_f + beta * l_f, "k_gamma": gamma * l_f}


GF = grid_forming_gains()
FL = follower_gains()


def follower(node_id, q):
    return {"id": node_id, "kind": "grid_following", "gains": FL, "cost": {"q": q}, "tau": TAU}


def mg1(load=4000.0):
    q = {1: 1.2, 2: 1.3, 3: 1.4}
    nodes = []
    for i in range(1, 9):
        if i == 4:
            nodes.append({"id": 4, "kind": "grid_forming", "gains": GF})
        elif i in q:
            nodes.append(follower(i, q[i]))
        else:
            nodes.append({"id": i, "kind": "load_only", "load": {"p": load}})
    lines = [(1, 4), (1, 2), (1, 5), (2, 4), (2, 6), (2, 8), (3, 7), (3, 2), (3, 4)]
    return {"name": "MG1", "v_ref": V_REF, "kappa": KAPPA, "nodes": nodes,
            "lines": [{"from": a, "to": b} for a, b in lines]}


def mg2(load=8000.0):
    nodes = [
        follower(1, 1.4),
        {"id": 2, "kind": "load_only", "load": {"p": load}},
        {"id": 3, "kind": "grid_forming", "gains": GF},
        follower(4, 1.5),
    ]
    lines = [(1, 2), (1, 3), (2, 3), (3, 4)]
    return {"name": "MG2", "v_ref": V_REF, "kappa": KAPPA, "nodes": nodes,
            "lines": [{"from": a, "to": b} for a, b in lines]}


def scenario():
    tie = {"r_pi": 1.0, "l_pi": 1e-3}
    steps = []
    for time, mg1_total, mg2_total in ((20.0, 20400.0, 8000.0), (40.0, 9500.0, 11000.0)):
        steps.append({"time": time, "microgrid": "MG1",
                      "loads": {str(i): {"p": mg1_total / 4} for i in (5, 6, 7, 8)}})
        steps.append({"time": time, "microgrid": "MG2", "loads": {"2": {"p": mg2_total}}})
    return {
        "description": "two microgrids, two tie lines, constant-power load steps at 20 s and 40 s",
        "microgrids": [mg1(), mg2()],
        "tie_lines": [
            {"mg_a": "MG1", "node_a": 5, "mg_b": "MG2", "node_b": 1, **tie},
            {"mg_a": "MG1", "node_a": 6, "mg_b": "MG2", "node_b": 2, **tie},
        ],
        "consensus": {"mu": 1e-2, "weight": 2e4},
        "schedule": steps,
        "horizon": 60.0,
    }


def reduced():
    return {
        "description": "grid-forming node and one follower with a resistive plus constant-power load",
        "microgrids": [{
            "name": "reduced", "v_ref": V_REF, "kappa": KAPPA,
            "nodes": [
                {"id": 1, "kind": "grid_forming", "gains": GF},
                {**follower(2, 1.4), "load": {"y": 5e-3, "p": 1000.0}},
            ],
            "lines": [{"from": 1, "to": 2, "r_pi": 0.1, "l_pi": 1e-4}],
        }],
    }


def unstable():
    gains = dict(GF, k_beta=1.0)
    return {
        "description": "grid-forming filter with positive current feedback",
        "microgrids": [{
            "name": "unstable", "v_ref": V_REF, "kappa": KAPPA,
            "nodes": [{"id": 1, "kind": "grid_forming", "gains": gains, "load": {"y": 1e-2}}],
        }],
    }


ENVELOPE = {
    "v_box": [950.0, 1050.0],
    "i_box": [-15.0, 15.0],
    "v_tilde_box": [-50.0, 50.0],
    "i_tilde_box": [-15.0, 15.0],
    "p_box": [0.0, 2000.0],
}


def main():
    OUT.mkdir(exist_ok=True)
    files = {"scenario.json": scenario(), "reduced.json": reduced(), "unstable.json": unstable(),
             "envelope.json": ENVELOPE, "envelope_nominal.json": dict(ENVELOPE, p_box=[0.0, 0.0])}
    for name, data in files.items():
        (OUT / name).write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")
        print(OUT / name)


if __name__ == "__main__":
    main()
