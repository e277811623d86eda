"""Forge one desk-scale scenario and report holdout ARUC over several construction seeds.

    python3 scripts/run_scenario.py classification --n 16
    python3 scripts/run_scenario.py regression --out runs/regression
"""
import argparse
import logging
import time
from collections import defaultdict

import numpy as np

from metav.forge import suspect_group
from metav.pipeline import benchmark, forge_scenario
from metav.scenarios import SCENARIOS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", choices=sorted(SCENARIOS))
    ap.add_argument("--seed", type=int, default=0, help="forge master seed")
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--n", type=int, help="fingerprint size (scenario recommendation if omitted)")
    ap.add_argument("--iters", type=int, default=1000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--out", help="write ru_curve.csv, suspects.csv and summary.txt here")
    ap.add_argument("--groups", action="store_true", help="print mean p_plus per suspect group")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    sc = SCENARIOS[args.scenario]()
    n = args.n or sc.fingerprint_size
    t = time.perf_counter()
    ens = forge_scenario(args.scenario, args.seed)
    print(f"forged {len(ens.suspects)} suspects in {time.perf_counter() - t:.1f}s")
    t = time.perf_counter()
    report = benchmark(ens, range(args.reps), n=n, iters=args.iters, lr=args.lr, standardize=sc.standardize)
    print(f"N={n} standardize={sc.standardize}  {args.reps} runs in {time.perf_counter() - t:.1f}s")
    print(report.summary(), end="")
    if args.out:
        report.write(args.out)
    if args.groups:
        by_id = {s.id: s for s in ens.holdout()}
        groups = defaultdict(list)
        for s in report.scores:
            groups[suspect_group(by_id[s.id])].append(s.p_plus)
        for g, v in sorted(groups.items()):
            print(f"  {g:<24} n={len(v):2d}  mean p_plus {np.mean(v):.3f}  min {np.min(v):.3f}")


if __name__ == "__main__":
    main()
