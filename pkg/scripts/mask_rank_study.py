#!/usr/bin/env python3
"""Rank-decay study: how the scheduled mask's numerical rank falls with training
progress for each schedule shape, at several sizes.  Emits TSV for plotting."""

import argparse

from embedkit.masks import SCHEDULE_KINDS, rank_trajectory


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="4,16,64")
    ap.add_argument("--samples", type=int, default=9)
    ap.add_argument("--eps", type=float, default=1e-8)
    args = ap.parse_args()

    print("schedule\tn\tt_frac\trank")
    for kind in SCHEDULE_KINDS:
        for n in (int(s) for s in args.sizes.split(",")):
            for frac, rank in rank_trajectory(kind, n, samples=args.samples, eps=args.eps):
                print(f"{kind}\t{n}\t{frac:.4f}\t{rank}")


if __name__ == "__main__":
    main()
