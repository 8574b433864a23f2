import json
import logging
from pathlib import Path

import pytest

from econport.config import load_scenario, parse_scenario
from econport.numerics import IntegratorConfig
from econport.sim import Regime, run_scenario

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# the shipped MG1 lists its grid-forming unit fourth; the re-index warning is expected
logging.getLogger("econport").setLevel(logging.ERROR)

SCENARIO_RUN = IntegratorConfig(horizon=60.0, sample_dt=0.01, rtol=1e-10, atol=1e-12)


def config_dict(name):
    return json.loads((CONFIGS / name).read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS


@pytest.fixture(scope="session")
def scenario():
    return load_scenario(CONFIGS / "scenario.json")


@pytest.fixture(scope="session")
def reduced():
    return load_scenario(CONFIGS / "reduced.json").network.microgrids[0]


@pytest.fixture(scope="session")
def mg1(scenario):
    return scenario.network.microgrids[0]


@pytest.fixture(scope="session")
def mg2(scenario):
    return scenario.network.microgrids[1]


@pytest.fixture(scope="session")
def gains():
    """Grid-forming and follower gains pinned in the shipped scenario."""
    nodes = config_dict("reduced.json")["microgrids"][0]["nodes"]
    return nodes[0]["gains"], nodes[1]["gains"]


@pytest.fixture
def build(gains):
    """Microgrid spec from a compact description: node kinds/loads and line pairs."""
    gf_gains, fl_gains = gains

    def make(nodes, lines=(), kappa=2000.0, tau=2.0, v_ref=1000.0, name="mg", line=None):
        out = []
        for k, nd in enumerate(nodes, start=1):
            nd = dict(nd)
            kind = nd.pop("kind")
            entry = {"id": k, "kind": kind, **nd}
            if kind == "grid_forming":
                entry.setdefault("gains", gf_gains)
            elif kind == "grid_following":
                entry.setdefault("gains", fl_gains)
                entry.setdefault("cost", {"q": 1.4})
                entry.setdefault("tau", tau)
            out.append(entry)
        data = {"microgrids": [{
            "name": name, "v_ref": v_ref, "kappa": kappa, "nodes": out,
            "lines": [{"from": a, "to": b, **(line or {})} for a, b in lines],
        }]}
        return parse_scenario(data).network.microgrids[0]

    return make


@pytest.fixture(scope="session")
def scenario_runs(scenario):
    """Both regimes of the shipped 60 s load-step scenario, with wall-clock times."""
    import time

    runs = {}
    for regime in Regime:
        start = time.perf_counter()
        res = run_scenario(scenario.network, regime, scenario.schedule, SCENARIO_RUN)
        runs[regime] = (res, time.perf_counter() - start)
    return runs


@pytest.fixture(scope="session")
def envelope():
    from econport.cli import load_envelope

    return load_envelope(CONFIGS / "envelope.json")


@pytest.fixture(scope="session")
def stability_cert(reduced, envelope):
    """Stability certificate of the reduced microgrid and the solve time."""
    import time

    from econport.certify import Kind, solve_certificate
    from econport.dynamics import affine_factorization

    shifted = affine_factorization(reduced, envelope)
    start = time.perf_counter()
    cert = solve_certificate(shifted, None, Kind.STABILITY)
    return cert, shifted, time.perf_counter() - start


@pytest.fixture(scope="session")
def econ_cert(reduced, envelope):
    """Economic-port certificate with an electric port at the follower node."""
    from econport.certify import Kind, solve_certificate
    from econport.dynamics import affine_factorization, port_matrices

    shifted = affine_factorization(reduced, envelope, econ_open=True)
    ports = port_matrices(reduced, (1,))
    return solve_certificate(shifted, ports, Kind.ECON_IFOFP), shifted, ports


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """``record(criterion, passed, detail)``: one summary line per acceptance criterion."""

    def record(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
