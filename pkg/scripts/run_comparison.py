"""Offline vs online comparison on the chain plant.

    python scripts/run_comparison.py [--config scripts/configs/default.json] [--out results]

Writes banks, per-seed traces, metrics.csv, summary.csv and manifest.json,
then prints the per-scenario mean total costs.
"""

import argparse
import logging

from dropsls.experiment import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed-offset", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    res = run_experiment(cfg, args.out, seed_offset=args.seed_offset)
    man = res["manifest"]
    print(f"{'scenario':>8} {'mode':>8} {'lambda*':>8} {'bound':>9} {'residual':>9} {'mean total':>11}")
    for name, rec in man["scenarios"].items():
        for mode, r in rec.items():
            print(f"{name:>8} {mode:>8} {r['lambda']:8.4g} {r['bound']:9.4f} {r['worst_residual']:9.3g} "
                  f"{r['mean_total_cost']:11.4f}")
    print(f"Riccati stationary cost per step: {man['oracle'].get('stationary_cost')}")
    print(f"wall clock {man['wall_clock_s']:.1f}s; artifacts in {res['out']}")


if __name__ == "__main__":
    main()
