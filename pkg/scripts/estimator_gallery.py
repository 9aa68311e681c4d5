#!/usr/bin/env python3
"""Evaluate the closed-form baselines across context lengths, no training.

Prints a normalized-MSE table (rows = estimator, columns = N) for one task
family. Handy for sanity-checking a family's difficulty before spending
compute on a model sweep.

    python scripts/estimator_gallery.py --family linear --d 8 --sigma 0.22
    python scripts/estimator_gallery.py --family sparse --d 20 --s 3 --N 5 10 20
"""

import argparse

import icl_lab.taskgen as tg
import icl_lab.trainer as tr
from icl_lab.runner import estimator_for


def build_family(args):
    if args.family == "linear":
        return tg.LinearFixedNoise(d=args.d, sigma=args.sigma)
    if args.family == "relu":
        return tg.TwoLayerReLU(d=args.d, r=args.r)
    if args.family == "sparse":
        return tg.SparseLinear(d=args.d, s=args.s)
    raise SystemExit(f"unknown family {args.family!r}")


def entries(family):
    out = [{"kind": "zero"}, {"kind": "ols"}, {"kind": "one_step_gd"},
           {"kind": "smoother", "kernel": "hilbert"},
           {"kind": "smoother", "kernel": "exponential"}]
    if isinstance(family, tg.LinearFixedNoise):
        out.append({"kind": "bayes_ridge"})
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="linear", choices=["linear", "relu", "sparse"])
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--sigma", type=float, default=0.22)
    ap.add_argument("--r", type=int, default=100)
    ap.add_argument("--s", type=int, default=3)
    ap.add_argument("--N", type=int, nargs="+", default=[5, 10, 20, 40])
    ap.add_argument("--tasks", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    family = build_family(args)
    print(f"family: {tr.family_label(family)}  eval tasks: {args.tasks}")
    header = "estimator".ljust(24) + "".join(f"N={N}".rjust(10) for N in args.N)
    print(header)
    print("-" * len(header))
    for entry in entries(family):
        model_id, predictor = estimator_for(entry, family)
        report = tr.evaluate(predictor, family, args.N, args.tasks, args.seed, model_id)
        cells = "".join(f"{row.normalized_mse:10.4f}" for row in report.rows)
        print(model_id.ljust(24) + cells)


if __name__ == "__main__":
    main()
