"""Issue and re-verify every certificate kind for the reduced two-node microgrid.

The electric-port certificate is expected to come back infeasible (exit 4);
its report records the best achievable margin.
Usage: ``python scripts/certify_reduced.py [--out results/certificates]``
"""
import argparse
import sys
from pathlib import Path

from econport.cli import main

ROOT = Path(__file__).resolve().parent.parent
CONFIG = str(ROOT / "configs" / "reduced.json")
ENVELOPE = str(ROOT / "configs" / "envelope.json")

RUNS = [
    ("stability", []),
    ("econ", ["--port-node", "2"]),
    ("electric", ["--port-node", "2"]),
]


def run(out: Path) -> int:
    codes = {}
    for kind, extra in RUNS:
        cert = out / f"{kind}.json"
        print(f"== {kind}")
        codes[kind] = main(["certify", CONFIG, "--kind", kind, "--envelope", ENVELOPE, "--out", str(cert), *extra])
        if codes[kind] == 0:
            again = out / f"{kind}.reverify.json"
            main(["verify-cert", CONFIG, str(cert), "--out", str(again)])
            same = again.read_bytes() == cert.with_name(f"{kind}.report.json").read_bytes()
            print(f"   re-verification byte-identical: {same}")
    print({k: v for k, v in codes.items()})
    return 0 if codes["stability"] == 0 and codes["econ"] == 0 else 1


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "results" / "certificates"))
    sys.exit(run(Path(ap.parse_args().out)))
