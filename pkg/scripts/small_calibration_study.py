#!/usr/bin/env python3
"""Small-calibration regime: with n0 << n1 the sqrt(n0)-scaled efficient
estimators behave like the calibration-only averages, so their variance
approaches Var[Q(X,d)|S=0] (or Var[C(X)d(X)|S=0] for the contrast).

Example:
    python scripts/small_calibration_study.py --n1 5000 --n0 50 --replications 2000
"""

import argparse

import numpy as np

from shifteval import (
    DatasetKind,
    Estimand,
    LinearPolicy,
    SimulationConfig,
    gaussian_shift_truth,
    theoretical_variance,
)
from shifteval.montecarlo import EstimatorSpec, McConfig, run_replications


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n1", type=int, default=5000)
    p.add_argument("--n0", type=int, default=50)
    p.add_argument("--replications", type=int, default=2000)
    p.add_argument("--seed", type=int, default=31)
    p.add_argument("--noise-sd", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)
    return p.parse_args()


def main():
    args = parse_args()
    n = args.n1 + args.n0
    base = SimulationConfig(
        p=2,
        mu=np.array([0.5, 0.5]),
        rho_s=args.n1 / n,
        n=n,
        outcome_coeffs=np.array([1.0, 1.0, 0.5, 0.25, 0.5, -0.5]),
        noise_sd=args.noise_sd,
        propensity=0.5,
        seed=args.seed,
    )
    policy = LinearPolicy(0.2, np.array([1.0, -1.0]))
    specs = (
        EstimatorSpec(name="theta_type2", estimand=Estimand.VALUE, kind=DatasetKind.TYPE2),
        EstimatorSpec(name="theta1_type1", estimand=Estimand.CONTRAST, kind=DatasetKind.TYPE1),
        EstimatorSpec(name="theta1_type2", estimand=Estimand.CONTRAST, kind=DatasetKind.TYPE2),
    )
    summary = run_replications(
        McConfig(base=base, replications=args.replications, policy=policy,
                 estimators=specs, n_jobs=args.jobs)
    )
    truth_obj = gaussian_shift_truth(base)
    print(f"{'estimator':<14} {'var sqrt(n0)':>13} {'calib-only var':>15} {'ratio':>7}")
    for spec in specs:
        tv = theoretical_variance(truth_obj, policy, spec.variant)
        e = summary.by_name(spec.name)
        print(
            f"{e.name:<14} {e.var_sqrt_n0:>13.4f} {tv.zeta_eff:>15.4f} "
            f"{e.var_sqrt_n0 / tv.zeta_eff:>7.4f}"
        )


if __name__ == "__main__":
    main()
