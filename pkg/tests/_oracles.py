"""Independent quadrature oracles shared by the test modules."""

import numpy as np
from scipy.integrate import quad


def quad_inf(fun, a=0.0, points=(1.0, 10.0, 100.0), tol=1e-13):
    """Integral over [a, inf) split at fixed break points."""
    edges = [a] + [x for x in points if x > a]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += quad(fun, lo, hi, epsabs=tol, epsrel=tol, limit=400)[0]
    total += quad(fun, edges[-1], np.inf, epsabs=tol, epsrel=tol, limit=400)[0]
    return total


def laplace_quad(density, Lam, a=0.0, points=(1.0, 10.0, 100.0)):
    """int_a^inf exp(Lam x) density(x) dx; oscillatory parts use QAWO/QAWF weights."""
    decay = lambda x: np.exp(Lam.real * x) * density(x)
    k = Lam.imag
    if k == 0:
        return quad_inf(decay, a, points)
    edges = [a] + [x for x in points if x > a]
    out = 0j
    for wt, unit in (("cos", 1.0), ("sin", 1j)):
        part = sum(quad(decay, lo, hi, weight=wt, wvar=k, epsabs=1e-14, limit=400)[0]
                   for lo, hi in zip(edges[:-1], edges[1:]))
        part += quad(decay, edges[-1], np.inf, weight=wt, wvar=k, epsabs=1e-14, limlst=200)[0]
        out += unit * part
    return out


def fd(fun, x, h):
    return (fun(x + h) - fun(x - h)) / (2 * h)
