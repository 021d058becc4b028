"""Paired online-minus-offline total-cost differences over many seeds.

    python scripts/paired_seed_study.py --scenario 3 4 5 --seeds 300 [--lambda-lo 0.01]

Reports the mean difference, its standard error, the fraction of seeds in
which online is no worse, and the mean over the first ten seeds.  Lowering
``--lambda-lo`` shows how the residual budget floor affects the gap.
"""

import argparse

import numpy as np

from dropsls.dropout import uniform_d_distribution
from dropsls.experiment import build_chain10
from dropsls.runtime import rollout
from dropsls.synthesis import synthesize_offline, synthesize_online_bank


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", type=int, nargs="+", default=[3, 4, 5])
    ap.add_argument("--seeds", type=int, default=300)
    ap.add_argument("--T", type=int, default=20)
    ap.add_argument("--T-sim", type=int, default=100)
    ap.add_argument("--lambda-lo", type=float, default=0.01)
    args = ap.parse_args()

    s = build_chain10()
    I = np.eye(s.n)
    dist = uniform_d_distribution(s.N, args.scenario)
    interval = (args.lambda_lo, 0.99)
    off = synthesize_offline(s, dist.topology, dist, I, I, args.T, interval)
    on = synthesize_online_bank(s, dist.topology, dist, I, I, args.T, interval)
    diff = np.array([
        rollout(on, "online", T_sim=args.T_sim, noise_seed=k, dropout_seed=k).total_cost
        - rollout(off, "offline", T_sim=args.T_sim, noise_seed=k, dropout_seed=k).total_cost
        for k in range(args.seeds)
    ])
    se = diff.std(ddof=1) / np.sqrt(len(diff)) if len(diff) > 1 else float("nan")
    print(f"lambda* offline {off.lam:.4g}, online {on.lam:.4g}")
    print(f"mean(online - offline) {diff.mean():.4f} +- {se:.4f} over {len(diff)} seeds")
    print(f"online no worse in {np.mean(diff <= 0):.1%} of seeds; first-10 mean {diff[:10].mean():.4f}")


if __name__ == "__main__":
    main()
