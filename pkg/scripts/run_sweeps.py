"""Fingerprint-size and ensemble-size sweeps on one scenario; writes trend CSVs.

    python3 scripts/run_sweeps.py classification --out runs/sweeps
"""
import argparse
import logging
from pathlib import Path

from metav.metrics import mean_ci, write_trend
from metav.pipeline import forge_scenario, sweep_ensemble, sweep_n
from metav.scenarios import SCENARIOS


def show(name, points):
    for p in points:
        m, ci = mean_ci(p.arucs)
        print(f"  {name}={p.value:g}  ARUC {m:.4f} +/- {ci:.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", choices=sorted(SCENARIOS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--ns", type=int, nargs="+", default=[4, 8, 16, 32])
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    ap.add_argument("--n", type=int, default=16, help="fingerprint size for the ensemble sweep")
    ap.add_argument("--out", default="runs/sweeps")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    sc = SCENARIOS[args.scenario]()
    ens = forge_scenario(args.scenario, args.seed)
    seeds = range(args.reps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    pts = sweep_n(ens, args.ns, seeds, standardize=sc.standardize)
    write_trend(pts, out / f"{args.scenario}_trend_n.csv", "n")
    print("fingerprint size")
    show("N", pts)

    pts = sweep_ensemble(ens, args.fractions, seeds, n=args.n, standardize=sc.standardize)
    write_trend(pts, out / f"{args.scenario}_trend_fraction.csv", "fraction")
    print("ensemble fraction")
    show("fraction", pts)


if __name__ == "__main__":
    main()
