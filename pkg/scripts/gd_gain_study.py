#!/usr/bin/env python3
"""How close can a scalar-gain one-step-GD predictor get to Bayes ridge?

Two sweeps on linear tasks:
  1. normalized MSE as the gain c moves around the analytic optimum
     c* = 1/(N + d + 1 + sigma^2 d), at fixed N;
  2. the best-gain error relative to Bayes ridge as N grows.

The scalar family carries an O(d/N) excess term from the sample covariance's
fluctuations, so the ratio to ridge starts large at small N and decays toward
1 as the context grows. This script documents that gap (see also the
acceptance test on the same comparison, which fails by design at N=40).

    python scripts/gd_gain_study.py --d 8 --sigma 0.22
"""

import argparse

import icl_lab.baselines as bl
import icl_lab.taskgen as tg
import icl_lab.trainer as tr


def gd_error(family, N, c, tasks, seed):
    predict = tr.estimator_predictor(lambda A: bl.one_step_gd_predict(A, c))
    return tr.evaluate(predict, family, [N], tasks, seed, "gd").rows[0].normalized_mse


def ridge_error(family, N, tasks, seed):
    lam = bl.bayes_ridge_lambda(family.sigma, family.d)

    def est(A):
        X, y, xq, _ = bl.split_prompt(A)
        return float(bl.ridge(X, y, lam).predict(xq[None, :])[0])

    return tr.evaluate(tr.estimator_predictor(est), family, [N], tasks, seed,
                       "ridge").rows[0].normalized_mse


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--sigma", type=float, default=0.22)
    ap.add_argument("--N", type=int, default=40)
    ap.add_argument("--N-sweep", type=int, nargs="+", default=[40, 100, 200, 400, 800])
    ap.add_argument("--tasks", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    family = tg.LinearFixedNoise(d=args.d, sigma=args.sigma)
    d, s2 = args.d, args.sigma ** 2

    N = args.N
    c_star = 1.0 / (N + d + 1 + s2 * d)
    ridge = ridge_error(family, N, args.tasks, args.seed)
    print(f"gain sweep at N={N} (analytic optimum c*={c_star:.5f}, "
          f"ridge={ridge:.4f}):")
    for scale in (0.5, 0.8, 1.0, 1.2, 2.0):
        c = scale * c_star
        err = gd_error(family, N, c, args.tasks, args.seed)
        print(f"  c = {scale:>3.1f} c* = {c:.5f}   gd = {err:.4f}   "
              f"gd/ridge = {err / ridge:.2f}")

    print("\nbest-gain gd vs ridge as the context grows:")
    for N in args.N_sweep:
        c = 1.0 / (N + d + 1 + s2 * d)
        gd = gd_error(family, N, c, args.tasks, args.seed)
        ridge = ridge_error(family, N, args.tasks, args.seed)
        print(f"  N = {N:4d}   gd = {gd:.4f}   ridge = {ridge:.4f}   "
              f"ratio = {gd / ridge:.2f}")


if __name__ == "__main__":
    main()
