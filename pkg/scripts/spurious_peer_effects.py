"""OLS versus network propensity score estimates when there is no peer effect.

Outcomes equal a confounded intercept, so any nonzero peer slope is
spurious. The OLS slope is compared with its population value obtained by
enumeration over covariate types and friend counts.
"""
import argparse
import math
from dataclasses import replace

import numpy as np

from netprop.dgp import peer_ols_population_slope
from netprop.experiments import mc_designs
from netprop.montecarlo import run_replications, summarize


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=300)
    args = parser.parse_args()

    cfg = replace(mc_designs()["no_effect"], reps=args.reps)
    rows = run_replications(cfg)
    report = summarize(cfg, rows)
    ok = [r for r in rows if r["status"] == "ok"]
    ols = np.array([r["ols_peer_share"] for r in ok])
    mcse = ols.std(ddof=1) / math.sqrt(len(ols))
    print(f"replications: {len(ok)}/{cfg.reps}")
    print(f"OLS peer slope       {ols.mean():+.4f} (mcse {mcse:.4f})")
    print(f"population slope     {peer_ols_population_slope(cfg.dgp):+.4f}")
    g = report.coefficients["gamma"]
    print(f"NPS gamma bias       {g.bias:+.4f} (mcse {g.mcse:.4f}), coverage {g.coverage:.3f}")


if __name__ == "__main__":
    main()
