"""Predicted speedup of the fragment workflow on the bundled chains.

Builds the task graph for each bundled chain with the number of SCC sweeps
its gas-phase run actually needs, then simulates 1..64 workers under a few
communication settings and writes one CSV per setting.

    python scripts/speedup_prediction.py [--out results/speedup]
"""

import argparse
from importlib import resources
from pathlib import Path

from fragsolv.core import CoulombParams, parse_fragments, parse_xyz
from fragsolv.fmo import ExternalPotential, SccConfig, classify_pairs, scc_loop
from fragsolv.workflow import CostModel, build_fmo_dag, speedup_csv, speedup_curve

SETTINGS = {
    "no_comm": CostModel(a=1e-3, b=0.05),
    "latency": CostModel(a=1e-3, b=0.05, alpha=0.5),
    "bandwidth": CostModel(a=1e-3, b=0.05, alpha=0.05, beta_byte=0.02),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default="results/speedup")
    ap.add_argument("--max-workers", type=int, default=64)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = resources.files("fragsolv") / "data"
    counts = [2 ** k for k in range(args.max_workers.bit_length()) if 2 ** k <= args.max_workers]

    for name in ("chain75", "chain138", "chain160"):
        system = parse_xyz((data / f"{name}.xyz").read_text())
        scheme = parse_fragments((data / f"{name}.frag").read_text(), system)
        sweeps = scc_loop(system, scheme, ExternalPotential.zeros(len(system)), CoulombParams(), SccConfig()).iteration_count
        near = {p for p, k in classify_pairs(system, scheme).items() if k == "near"}
        for label, cost in SETTINGS.items():
            dag = build_fmo_dag(scheme, sweeps, cost, near)
            rows = speedup_curve(dag, counts)
            (out / f"{name}_{label}.csv").write_text(speedup_csv(rows))
            best = max(rows, key=lambda r: r.speedup)
            print(
                f"{name:9s} {label:9s} {len(scheme):2d} fragments, {sweeps:2d} sweeps, {len(dag):4d} tasks: "
                f"critical path {dag.critical_path():8.2f}, best speedup {best.speedup:5.2f} at {best.workers} workers"
            )


if __name__ == "__main__":
    main()
