"""Velocity-quadrature convergence at resonance, plus the alpha scan at Omega = 0.

Compares the Doppler rule at increasing order with plain Gauss-Hermite, which
does not resolve the narrow optical Lorentzian, then prints <rho33>(0) on a
coarse alpha grid.
"""

import numpy as np

from cptwall.averaging import rho33_average
from cptwall.core import PhysicalParams

if __name__ == "__main__":
    p = PhysicalParams(elastic_prob=0.5)
    ref = rho33_average(p, 0.0, order=128)
    print("rule           order   <rho33>(0)     rel. diff vs doppler-128")
    for rule, orders in (("doppler", (8, 16, 32, 64)), ("gauss-hermite", (32, 64, 128, 256))):
        for n in orders:
            v = rho33_average(p, 0.0, order=n, rule=rule)
            print(f"{rule:14s} {n:5d}   {v:.10e}   {abs(v / ref - 1):.2e}")
    print("\nalpha   <rho33>(0)")
    for a in (0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999, 1.0):
        print(f"{a:5.3f}   {rho33_average(p.with_(elastic_prob=a), 0.0):.6e}")
