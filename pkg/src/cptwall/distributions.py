"""Time statistics of an atom moving between the beam and the dark zone.

Four random durations enter the averaged propagators:

* ``tau``   -- one crossing of the beam along a straight chord,
* ``t``     -- time already spent in the beam by an atom observed there,
* ``tau'``  -- one crossing of the dark annulus between two beam crossings,
* ``tau_d`` -- one stay in the dark regime (between sticking collisions).

For each there is a density and its Laplace average ``g(lambda) = <exp(lambda T)>``
evaluated in closed form from smooth fitted approximations of the exact laws.
Dimensionless times are ``x = t v_T / r`` for the beam and
``x = tau' v_T / ell_perp`` for the dark chords.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import PhysicalParams
from .numerics import dawson

PI32 = np.pi**1.5


class GeometryError(ValueError):
    """Cell/beam/alpha combination for which the dark-regime model is undefined."""


@dataclass(frozen=True)
class DwellFit:
    """Coefficients of the fitted beam dwell-time density.

    ``a`` is the printed 0.49 refined (within its rounding) so that the density
    integrates to one; :data:`DWELL_FIT_PRINTED` keeps the literal values.
    """

    A: float = 0.70839
    a: float = 0.49001519404976973
    b: float = 2.286
    c: float = 1.272


@dataclass(frozen=True)
class DarkChordFit:
    a: float = 0.89
    b: float = 2.56
    x0: float = 0.3864


DWELL_FIT = DwellFit()
DWELL_FIT_PRINTED = DwellFit(a=0.49)
DARK_CHORD_FIT = DarkChordFit()


@dataclass(frozen=True)
class GeometryDerived:
    """Derived time scales of one parameter set.

    For ``alpha == 1`` the dark regime is never reached: ``N_bar``,
    ``tau_bar_dark`` are ``inf`` and ``h`` is 0. When ``tau_bar_dark == tau0``
    (beam fills the cell) ``h`` is ``inf`` and ``tau_d`` is deterministic.
    """

    v_T: float
    tau_bar: float
    ell_perp: float
    tau_bar_prime: float
    tau0: float
    tau_bar_dark: float
    h: float
    N_bar: float


def ell_perp(p: PhysicalParams) -> float:
    """Mean transverse path across the dark annulus per beam-passing chord."""
    R, r = p.cell_radius, p.beam_radius
    if r >= R:
        return 0.0
    q = r / R
    val = R * np.sqrt(1 - q * q) - np.pi * r / 2 + R * R / r * np.arcsin(q)
    return max(float(val), 0.0)


def mean_tau_dark(p: PhysicalParams) -> float:
    """Mean dark-regime duration from the beam/dark time balance."""
    return geometry(p).tau_bar_dark


def geometry(p: PhysicalParams) -> GeometryDerived:
    v_T = p.v_thermal
    R, r, alpha = p.cell_radius, p.beam_radius, p.elastic_prob
    tau_bar = PI32 / 2 * r / v_T
    ell = ell_perp(p)
    tau_bar_prime = ell * np.sqrt(np.pi) / v_T
    tau0 = (R - r) / v_T
    if alpha >= 1:
        return GeometryDerived(v_T, tau_bar, ell, tau_bar_prime, tau0, np.inf, 0.0, np.inf)
    N_bar = alpha / (1 - alpha)
    tau_bar_dark = (R * R / (r * r) - 1) * tau_bar * (N_bar + 1) - tau_bar_prime * N_bar
    gap = tau_bar_dark - tau0
    scale = tau_bar * (N_bar + 1) + tau_bar_prime * N_bar
    if abs(gap) <= 1e-12 * scale:
        h = np.inf
    elif gap < 0:
        raise GeometryError(
            f"mean dark-regime time {tau_bar_dark:.4g} s does not exceed the minimal "
            f"dark time {tau0:.4g} s (R={R}, r={r}, alpha={alpha}); the shifted "
            "exponential dark-time model is undefined"
        )
    else:
        h = 1.0 / gap
    return GeometryDerived(v_T, tau_bar, ell, tau_bar_prime, tau0, tau_bar_dark, h, N_bar)


# --------------------------------------------------------------------------- beam


def chord_time(v_perp, phi, p: PhysicalParams):
    """Beam crossing time of a chord with wall impact angle ``phi``."""
    phi = np.asarray(phi, dtype=float)
    v_perp = np.asarray(v_perp, dtype=float)
    R, r = p.cell_radius, p.beam_radius
    phi_max = np.arcsin(min(r / R, 1.0))
    if np.any(phi < 0) or np.any(phi > phi_max * (1 + 1e-12)):
        raise ValueError(f"phi outside the beam-passing range [0, {phi_max:.6g}]")
    if np.any(v_perp <= 0):
        raise ValueError("v_perp must be positive")
    s = np.sin(phi)
    # r^2 - R^2 sin^2 = (r - R s)(r + R s); the first factor is written as a
    # product of sines so it stays accurate near tangency
    gap = 2 * R * np.cos(0.5 * (phi_max + phi)) * np.sin(0.5 * (phi_max - phi))
    half = np.sqrt(np.clip(gap * (r + R * s), 0.0, None))
    return 2 * half / v_perp


def F_tau(tau, p: PhysicalParams):
    """Exact CDF of the single-crossing time ``tau``: ``D(z)/z`` with ``z = 2r/(tau v_T)``."""
    tau = np.asarray(tau, dtype=float)
    return _F_tau_scaled(tau * p.v_thermal / p.beam_radius)


def _F_tau_scaled(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = 2.0 / x
        F = dawson(z) / z
    F = np.where(x > 0, F, 0.0)
    return np.where(np.isinf(x), 1.0, F)


def f_t_exact(t, p: PhysicalParams):
    """Exact density of the elapsed beam time of an observed atom."""
    g = geometry(p)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    return (1.0 - F_tau(t, p)) / g.tau_bar


def f_t_approx(x, fit: DwellFit = DWELL_FIT):
    """Fitted dimensionless dwell density ``f~_t(x)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be >= 0")
    xs = np.where(x > 0, x, 1.0)
    cube = np.where(x > 0, (-np.expm1(-fit.a * xs)) ** 3 / (xs * xs), 0.0)
    return (2 / PI32 * np.exp(-fit.b * x) + 16 / (3 * PI32) * cube
            + fit.A * x * np.exp(-fit.c * x))


def f_t_approx_prime(x, fit: DwellFit = DWELL_FIT):
    """Derivative of :func:`f_t_approx`."""
    x = np.asarray(x, dtype=float)
    a = fit.a
    xs = np.where(x > 1e-4, x, 1.0)
    em = -np.expm1(-a * xs)
    mid = 3 * a * np.exp(-a * xs) * em**2 / xs**2 - 2 * em**3 / xs**3
    # series of d/dx (1-e^{-ax})^3/x^2 about 0: a^3 - 3a^4 x + (15/4) a^5 x^2 ...
    mid_small = a**3 - 3 * a**4 * x + 15 / 4 * a**5 * x * x
    mid = np.where(x > 1e-4, mid, mid_small)
    return (-fit.b * 2 / PI32 * np.exp(-fit.b * x) + 16 / (3 * PI32) * mid
            + fit.A * np.exp(-fit.c * x) * (1 - fit.c * x))


def _plogp(beta):
    beta = np.asarray(beta, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = beta * np.log(beta)
    return np.where(beta == 0, 0.0, out)


def g_t_scaled(Lam, fit: DwellFit = DWELL_FIT):
    """Laplace average of ``f~_t`` at dimensionless rate ``Lam`` (Re Lam <= 0)."""
    L = np.asarray(Lam, dtype=complex)
    a = fit.a
    diff3 = _plogp(-L) - 3 * _plogp(a - L) + 3 * _plogp(2 * a - L) - _plogp(3 * a - L)
    return 2 / PI32 / (fit.b - L) + fit.A / (fit.c - L) ** 2 + 16 / (3 * PI32) * diff3


def g_t(lam, p: PhysicalParams, fit: DwellFit = DWELL_FIT):
    """``<exp(lam t)>`` over the elapsed-beam-time density."""
    return g_t_scaled(np.asarray(lam, dtype=complex) * p.beam_radius / p.v_thermal, fit)


def g_tau(lam, p: PhysicalParams, fit: DwellFit = DWELL_FIT):
    """``<exp(lam tau)>`` over single beam crossings, via ``1 + lam tau_bar g_t``."""
    lam = np.asarray(lam, dtype=complex)
    tau_bar = PI32 / 2 * p.beam_radius / p.v_thermal
    return 1.0 + lam * tau_bar * g_t(lam, p, fit)


# --------------------------------------------------------------------------- dark chords


def F_prime(tau_p, p: PhysicalParams):
    """CDF of the dark-chord time with the path fixed to its mean ``ell_perp``."""
    tau_p = np.asarray(tau_p, dtype=float)
    ell = ell_perp(p)
    if ell == 0:
        return np.where(tau_p >= 0, 1.0, 0.0)
    with np.errstate(divide="ignore"):
        arg = ell / (tau_p * p.v_thermal)
    return np.where(tau_p > 0, np.exp(-arg * arg), 0.0)


def F_prime_approx(x, fit: DarkChordFit = DARK_CHORD_FIT):
    """Fitted dimensionless dark-chord CDF; identically 0 up to ``x0``."""
    y = np.asarray(x, dtype=float) - fit.x0
    ys = np.where(y > 0, y, 1.0)
    val = 1 - (-np.expm1(-fit.a * ys)) ** 4 / ys**2 - np.exp(-fit.b * ys) * (1 + fit.b * ys)
    return np.where(y > 0, val, 0.0)


def F_prime_approx_pdf(x, fit: DarkChordFit = DARK_CHORD_FIT):
    y = np.asarray(x, dtype=float) - fit.x0
    a, b = fit.a, fit.b
    ys = np.where(y > 1e-6, y, 1.0)
    em = -np.expm1(-a * ys)
    val = (-4 * a * np.exp(-a * ys) * em**3 / ys**2 + 2 * em**4 / ys**3
           + b * b * ys * np.exp(-b * ys))
    small = (b * b - 2 * a**4) * y
    return np.where(y > 1e-6, val, np.where(y > 0, small, 0.0))


def g_prime_scaled(Lam, fit: DarkChordFit = DARK_CHORD_FIT):
    """Laplace-Stieltjes average of ``F~'`` at dimensionless rate ``Lam``."""
    L = np.asarray(Lam, dtype=complex)
    a, b = fit.a, fit.b
    diff4 = (_plogp(4 * a - L) - 4 * _plogp(3 * a - L) + 6 * _plogp(2 * a - L)
             - 4 * _plogp(a - L) + _plogp(-L))
    inner = (2 * b - L) / (b - L) ** 2 + diff4
    return np.exp(L * fit.x0) * (1 + L * inner)


def g_tau_prime(lam, p: PhysicalParams, fit: DarkChordFit = DARK_CHORD_FIT):
    lam = np.asarray(lam, dtype=complex)
    ell = ell_perp(p)
    if ell == 0:
        return np.ones_like(lam)
    return g_prime_scaled(lam * ell / p.v_thermal, fit)


# --------------------------------------------------------------------------- dark regime


def g_tau_d(lam, p: PhysicalParams):
    """``<exp(lam tau_d)>`` for the shifted-exponential dark-regime law."""
    g = geometry(p)
    if p.elastic_prob >= 1:
        raise ValueError("dark regime is never entered at alpha = 1")
    lam = np.asarray(lam, dtype=complex)
    shift = np.exp(lam * g.tau0)
    if np.isinf(g.h):
        return shift
    return shift / (1 - lam / g.h)


# --------------------------------------------------------------------------- laws


@dataclass(frozen=True)
class TimeLaw:
    """A positive random duration: Laplace average, density and sampler.

    ``atom`` marks a deterministic duration (then ``pdf`` is None).
    """

    name: str
    laplace: Callable
    mean: float
    pdf: Optional[Callable] = None
    sampler: Optional[Callable] = None
    atom: Optional[float] = None
    start: float = 0.0

    def __call__(self, lam):
        return self.laplace(lam)

    def sample(self, rng: np.random.Generator, size):
        if self.atom is not None:
            return np.full(size, self.atom)
        return self.sampler(rng, size)


class _InverseCDF:
    """Tabulated inverse of a monotone CDF on ``[start, x_hi]`` with a
    power-law tail ``1 - F ~ k / (x - start)**2`` beyond ``x_hi``."""

    def __init__(self, cdf, start, x_hi, tail_k):
        y = np.concatenate([np.linspace(0, 1, 4001)[:-1] ** 2, np.geomspace(1, x_hi - start, 40001)])
        x = start + y
        F = cdf(x)
        F = np.maximum.accumulate(F)
        keep = np.concatenate([[True], np.diff(F) > 0])
        self.x, self.F = x[keep], F[keep]
        self.start, self.tail_k = start, tail_k
        self.F_hi = self.F[-1]

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.interp(u, self.F, self.x)
        tail = u > self.F_hi
        out[tail] = self.start + np.sqrt(self.tail_k / (1 - u[tail]))
        return out


_INV_CACHE: dict = {}


def _dwell_inverse(fit: DwellFit):
    key = ("dwell", fit)
    if key not in _INV_CACHE:
        f0 = 2 / PI32
        # tail: 1 - F = f~_t(x)/f~_t(0) -> (16/(3 pi^1.5) / f0) / x^2 = (8/3)/x^2
        _INV_CACHE[key] = _InverseCDF(lambda x: 1 - f_t_approx(x, fit) / f0, 0.0, 80.0,
                                      16 / (3 * PI32) / f0)
    return _INV_CACHE[key]


def _dark_chord_inverse(fit: DarkChordFit):
    key = ("chord", fit)
    if key not in _INV_CACHE:
        _INV_CACHE[key] = _InverseCDF(lambda x: F_prime_approx(x, fit), fit.x0,
                                      fit.x0 + 80.0, 1.0)
    return _INV_CACHE[key]


def time_laws(p: PhysicalParams, fit: DwellFit = DWELL_FIT,
              chord_fit: DarkChordFit = DARK_CHORD_FIT) -> dict:
    """The four duration laws (``t``, ``tau``, ``tau_prime``, ``tau_d``) used by
    the averaging engine, each consistent with its closed-form ``g``."""
    geo = geometry(p)
    s_beam = p.beam_radius / geo.v_T
    f0 = 2 / PI32
    laws = {
        "t": TimeLaw(
            # 1/x^2 tail: the elapsed-time mean diverges
            "t", lambda lam: g_t(lam, p, fit), np.inf,
            pdf=lambda t: f_t_approx(np.asarray(t) / s_beam, fit) / s_beam,
        ),
        "tau": TimeLaw(
            "tau", lambda lam: g_tau(lam, p, fit), geo.tau_bar,
            pdf=lambda t: -f_t_approx_prime(np.asarray(t) / s_beam, fit) / (f0 * s_beam),
            sampler=lambda rng, n: s_beam * _dwell_inverse(fit)(rng.random(n)),
        ),
    }
    if geo.ell_perp > 0:
        s_dark = geo.ell_perp / geo.v_T
        laws["tau_prime"] = TimeLaw(
            "tau_prime", lambda lam: g_tau_prime(lam, p, chord_fit), geo.tau_bar_prime,
            pdf=lambda t: F_prime_approx_pdf(np.asarray(t) / s_dark, chord_fit) / s_dark,
            sampler=lambda rng, n: s_dark * _dark_chord_inverse(chord_fit)(rng.random(n)),
            start=chord_fit.x0 * s_dark,
        )
    else:
        laws["tau_prime"] = TimeLaw("tau_prime", lambda lam: np.ones_like(np.asarray(lam, complex)),
                                    0.0, atom=0.0)
    if p.elastic_prob < 1:
        if np.isinf(geo.h):
            laws["tau_d"] = TimeLaw("tau_d", lambda lam: g_tau_d(lam, p), geo.tau0, atom=geo.tau0)
        else:
            h, t0 = geo.h, geo.tau0
            laws["tau_d"] = TimeLaw(
                "tau_d", lambda lam: g_tau_d(lam, p), geo.tau_bar_dark,
                pdf=lambda t: np.where(np.asarray(t) > t0, h * np.exp(-h * (np.asarray(t) - t0)), 0.0),
                sampler=lambda rng, n: t0 + rng.exponential(1 / h, n),
                start=t0,
            )
    return laws


# --------------------------------------------------------------------------- exact samplers


def sample_exact_tau(rng: np.random.Generator, n, p: PhysicalParams):
    """Beam crossing times from the cosine angle law and 2-D Maxwell speeds."""
    R, r = p.cell_radius, p.beam_radius
    phi = np.arcsin(r / R * rng.random(n))
    v = p.v_thermal * np.sqrt(-np.log1p(-rng.random(n)))
    return chord_time(v, phi, p)


def sample_exact_tau_prime(rng: np.random.Generator, n, p: PhysicalParams):
    """Dark-chord times with the path fixed to ``ell_perp`` (CDF exp(-ell^2/(tau v_T)^2))."""
    ell = ell_perp(p)
    if ell == 0:
        return np.zeros(n)
    return ell / (p.v_thermal * np.sqrt(-np.log(1 - rng.random(n))))
