"""Compare sandwich standard errors with a pairs-cluster bootstrap on one panel."""
import argparse

import numpy as np

from netprop.dgp import simulate
from netprop.estimator import COEF_NAMES, EstimatorOptions, estimate_tau, fit_theta, prepare
from netprop.experiments import confounded
from netprop.montecarlo import cluster_bootstrap


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--groups", type=int, default=200)
    parser.add_argument("--draws", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=1212)
    args = parser.parse_args()

    sample = prepare(simulate(confounded(args.groups), seed=args.seed).panel)
    opts = EstimatorOptions()
    fit = fit_theta(sample, options=opts)
    est = estimate_tau(sample, fit.theta_hat, opts)
    draws = cluster_bootstrap(sample, fit.theta_hat, opts, reps=args.draws, seed=args.seed)
    boot = np.nanstd(draws, axis=0, ddof=1)
    print(f"{'':<8}{'estimate':>10}{'sandwich':>10}{'bootstrap':>11}{'ratio':>8}")
    for name, b, s, bs in zip(COEF_NAMES, est.as_array(), est.se, boot):
        print(f"{name:<8}{b:>10.4f}{s:>10.4f}{bs:>11.4f}{s / bs:>8.3f}")


if __name__ == "__main__":
    main()
