"""Analytic line shape vs model-faithful Monte Carlo at the acceptance detunings.

Usage: python3 scripts/mc_compare.py [--atoms N] [--seed S] [--alphas 0 0.5 1]
"""

import argparse
import time

import numpy as np

from cptwall.averaging import rho33_average
from cptwall.core import PhysicalParams
from cptwall.montecarlo import TrajectoryConfig, estimate_rho33


def run(alphas, omegas, atoms, seed, workers):
    p0 = PhysicalParams()
    print(f"{'alpha':>6} {'Omega/2pi [Hz]':>15} {'analytic':>12} {'mc':>12} {'stderr':>10} {'z':>6}")
    for a in alphas:
        p = p0.with_(elastic_prob=a)
        for om in omegas:
            t0 = time.perf_counter()
            est = estimate_rho33(p, om, TrajectoryConfig(n_atoms=atoms, seed=seed), workers)
            ana = rho33_average(p, om)
            z = (est.mean - ana) / est.std_error if est.std_error else 0.0
            print(f"{a:6.3g} {om / (2 * np.pi):15.6g} {ana:12.5e} {est.mean:12.5e} "
                  f"{est.std_error:10.2e} {z:+6.2f}  ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--atoms", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    a = ap.parse_args()
    f = 2 * np.pi * np.array([0.0, 200.0, -200.0, 1e4, -1e4])
    run(a.alphas, f, a.atoms, a.seed, a.workers)
