"""Ensemble-averaged excited-state population.

An atom observed in the beam carries the history of a random Ramsey sequence:
beam crossings ``tau`` alternating with dark chords ``tau'`` for a geometric
number of specular bounces, separated by dark-regime stays ``tau_d`` at each
sticking collision. Averaging the propagators over those durations replaces
``exp(A T)`` by ``X diag(g(lambda)) X^-1`` and the geometric bounce count by
``(1 - alpha)(I - alpha M)^-1``. The remaining integral over the longitudinal
velocity is a quadrature sum.

Notation for one velocity node (all 3x3 unless noted)::

    Gt, Gtau       beam propagator averaged over t and tau
    Gp, Gd         dark propagator averaged over tau' and tau_d
    P = Gtau Gp,   Q = Gp Gtau
    C_v = (I - alpha P)^-1 (I - Gtau) rho_S          (3-vector)
    D_v = (1 - alpha) Gtau (I - alpha Q)^-1

and ``<rho33> = T1 + T2 + T3`` with

    T1 = sum_v w U^T Gt (1 - alpha)(I - alpha Q)^-1 . <rho_b>
    T2 = sum_v w V
    T3 = sum_v w U^T [(I - Gt) rho_S + alpha Gt Gp C_v]
    <rho_b> = (I - Gd D)^-1 Gd C,    C = sum_v w C_v,  D = sum_v w D_v.

``C_v`` uses ``(I-P)^-1 [I - (1-alpha) P (I-alpha P)^-1] = (I - alpha P)^-1``,
which holds because every factor is a function of ``P``.
"""

from __future__ import annotations

import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad_vec

from . import __version__
from .core import (AffineGenerator, PhysicalParams, beam_generator, dark_generator,
                   readout, stationary_state)
from .distributions import TimeLaw, geometry, time_laws
from .numerics import (DefectiveMatrixError, EigenSystem, QuadratureRule, doppler_rule,
                       eigen_decompose, expm, gauss_hermite)

DEFAULT_ORDER = 32
DEFAULT_RULE = "doppler"
NEGATIVE_NOISE = 1e-12
_CHUNK = 16
_I3 = np.eye(3)
# d/d(Omega) of the beam and dark generators
_K_RAMAN = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


class DivergenceError(ArithmeticError):
    """A geometric series over bounce numbers does not converge."""


@dataclass(frozen=True)
class AveragedPropagators:
    G_t: np.ndarray
    G_tau: np.ndarray
    G_tau_prime: np.ndarray
    G_tau_d: Optional[np.ndarray]
    fallback_nodes: int = 0


@dataclass(frozen=True)
class Spectrum:
    """A line shape ``rho33(Omega)`` with the settings that produced it."""

    omega: np.ndarray
    rho33: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.omega) <= 0):
            raise ValueError("Omega grid must be strictly increasing")

    @property
    def points(self):
        return list(zip(self.omega.tolist(), self.rho33.tolist()))


# --------------------------------------------------------------------------- building blocks


def velocity_nodes(p: PhysicalParams, order: int = DEFAULT_ORDER, rule: str = DEFAULT_RULE):
    """Longitudinal velocities and Maxwell weights (summing to ~1)."""
    return _velocity_nodes(p.gamma_prime, p.wavenumber, p.v_thermal, p.detuning_optical,
                           order, rule)


@functools.lru_cache(maxsize=64)
def _velocity_nodes(gamma_prime, k, v_T, omega_L, order, rule):
    if rule == "doppler":
        q: QuadratureRule = doppler_rule(gamma_prime / (k * v_T), omega_L / (k * v_T), order)
        w = np.array(q.weights)
    elif rule == "gauss-hermite":
        q = gauss_hermite(order)
        w = np.array(q.weights) / np.sqrt(np.pi)
    else:
        raise ValueError(f"unknown velocity rule {rule!r}")
    return v_T * np.array(q.nodes), w


def _law_fallback(A, law: TimeLaw):
    if law.atom is not None:
        return expm(A, law.atom)
    if law.pdf is None:
        raise DefectiveMatrixError("no density available for the quadrature fallback")
    val, _ = quad_vec(lambda t: expm(A, t) * law.pdf(t), law.start, np.inf,
                      epsabs=1e-13, epsrel=1e-11, limit=2000)
    return val


def averaged_propagator(g, law, notes: Optional[list] = None) -> np.ndarray:
    """``<exp(A T)>`` for the generator ``g`` (or a bare matrix) and duration law.

    ``law`` is a :class:`TimeLaw` or any callable ``lambda -> <exp(lambda T)>``.
    When the eigenvectors are ill-conditioned the average is integrated directly
    against the law's density (only possible for a :class:`TimeLaw`); each such
    node is recorded in ``notes``.
    """
    A = g.matrix if isinstance(g, AffineGenerator) else np.asarray(g, dtype=float)
    es = eigen_decompose(A, check=False)
    bad = es.cond >= 1e8
    if not np.any(bad):
        return es.apply_real(law(es.eigenvalues))
    if not isinstance(law, TimeLaw):
        raise DefectiveMatrixError("ill-conditioned generator and no density to integrate")
    out = np.empty(A.shape)
    good = ~bad
    if np.any(good):
        sub = EigenSystem(es.eigenvalues[good], es.X[good], es.X_inv[good], es.cond[good])
        out[good] = sub.apply_real(law(sub.eigenvalues))
    flat_A = A.reshape(-1, 3, 3)
    flat_out = out.reshape(-1, 3, 3)
    for i in np.flatnonzero(np.ravel(bad)):
        flat_out[i] = _law_fallback(flat_A[i], law)
        if notes is not None:
            notes.append("quadrature-fallback")
    return out


def _spectral_radius(M):
    return np.abs(np.linalg.eigvals(M)).max(axis=-1)


def geometric_average(M, alpha: float) -> np.ndarray:
    """``sum_n (1 - alpha) alpha^n M^n = (1 - alpha)(I - alpha M)^-1``."""
    M = np.asarray(M, dtype=float)
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    rad = alpha * _spectral_radius(M)
    if np.any(rad >= 1):
        raise DivergenceError(f"spectral radius of alpha*M is {np.max(rad):.6g} >= 1")
    if alpha == 1:
        return np.zeros_like(M)
    return (1 - alpha) * np.linalg.inv(_I3 - alpha * M)


def averaged_propagators(p: PhysicalParams, v_z, notes=None) -> AveragedPropagators:
    """Beam propagators averaged over ``t`` and ``tau`` at each ``v_z``; dark ones
    over ``tau'`` and ``tau_d`` (``None`` at alpha = 1)."""
    laws = time_laws(p)
    beam = beam_generator(p, v_z)
    notes = [] if notes is None else notes
    G_t = averaged_propagator(beam, laws["t"], notes)
    G_tau = averaged_propagator(beam, laws["tau"], notes)
    dark = dark_generator(p)
    G_p = averaged_propagator(dark, laws["tau_prime"], notes)
    G_d = averaged_propagator(dark, laws["tau_d"], notes) if "tau_d" in laws else None
    return AveragedPropagators(G_t, G_tau, G_p, G_d, len(notes))


def chain_matrices(p: PhysicalParams, v_z, props: Optional[AveragedPropagators] = None):
    """Per-velocity integrands ``(C_v, D_v)`` of the bounce-chain sums."""
    props = averaged_propagators(p, v_z) if props is None else props
    rho_s = stationary_state(beam_generator(p, v_z))
    return _chain(props.G_tau, props.G_tau_prime, rho_s, p.elastic_prob)


def _chain(G_tau, G_p, rho_s, alpha):
    P = G_tau @ G_p
    Q = G_p @ G_tau
    rad = _spectral_radius(P)
    if np.any(rad >= 1):
        raise DivergenceError(f"spectral radius of Gtau Gp reached {np.max(rad):.6g}")
    drive = np.einsum("...ij,...j->...i", _I3 - G_tau, rho_s)
    C_v = np.linalg.solve(_I3 - alpha * P, drive[..., None])[..., 0]
    if alpha == 1:
        D_v = np.zeros_like(G_tau)
    else:
        D_v = (1 - alpha) * G_tau @ np.linalg.inv(_I3 - alpha * Q)
    return C_v, D_v


def rho_b_average(C, D, G_tau_d) -> np.ndarray:
    """Mean state at the start of a beam-passing regime, fixed point of
    ``rho_b = Gd (C + D rho_b)``."""
    M = _I3 - G_tau_d @ D
    try:
        return np.linalg.solve(M, G_tau_d @ C)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular entry-state system: nonphysical parameters") from exc


# --------------------------------------------------------------------------- engine


def _block(p: PhysicalParams, omegas: np.ndarray, v_z, w, terms=False):
    """<rho33> for a block of Raman detunings sharing one velocity rule."""
    alpha = p.elastic_prob
    laws = time_laws(p)
    p0 = p.with_(detuning_raman=0.0)
    beam0 = beam_generator(p0, v_z)
    ro = readout(p0, v_z)
    m = len(omegas)
    A = beam0.matrix[None] + omegas[:, None, None, None] * _K_RAMAN
    B = np.broadcast_to(beam0.drive, A.shape[:-1])
    rho_s = -np.linalg.solve(A, B[..., None])[..., 0]

    notes: list = []
    G_t = averaged_propagator(A, laws["t"], notes)
    G_tau = averaged_propagator(A, laws["tau"], notes)
    dark = dark_generator(p0).matrix[None] + omegas[:, None, None] * _K_RAMAN
    G_p = averaged_propagator(dark, laws["tau_prime"], notes)[:, None]

    C_v, D_v = _chain(G_tau, G_p, rho_s, alpha)
    U = ro.U  # (n, 3)
    uGt = np.einsum("ni,mnij->mnj", U, G_t)
    T2 = np.full(m, np.sum(w * ro.V))
    t3_local = np.einsum("ni,mni->mn", U, rho_s) - np.einsum("mnj,mnj->mn", uGt, rho_s)
    uGtGp = np.einsum("mnj,mnjk->mnk", uGt, np.broadcast_to(G_p, G_t.shape))
    t3_chain = alpha * np.einsum("mnk,mnk->mn", uGtGp, C_v)
    T3 = np.sum(w * (t3_local + t3_chain), axis=1)

    if alpha < 1:
        G_d = averaged_propagator(dark, laws["tau_d"], notes)
        C = np.sum(w[:, None] * C_v, axis=1)
        D = np.sum(w[:, None, None] * D_v, axis=1)
        rho_b = np.stack([rho_b_average(C[i], D[i], G_d[i]) for i in range(m)])
        Q = np.broadcast_to(G_p, G_tau.shape) @ G_tau
        # row vector U^T Gt (I - alpha Q)^-1 via the transposed system
        kern = np.linalg.solve(np.swapaxes(_I3 - alpha * Q, -1, -2), uGt[..., None])[..., 0]
        T1 = (1 - alpha) * np.einsum("mnk,mk->m", w[None, :, None] * kern, rho_b)
    else:
        T1 = np.zeros(m)
    total = T1 + T2 + T3
    if terms:
        return total, (T1, T2, T3), notes
    return total, notes


def _finish(values, omegas):
    out = np.array(values, dtype=float)
    for om, v in zip(omegas, out):
        if not np.isfinite(v) or v < -NEGATIVE_NOISE or v > 1:
            raise ValueError(f"<rho33> = {v!r} out of [0, 1] at Omega = {om!r} rad/s")
    return np.where(out < 0, 0.0, out)


def rho33_average(p: PhysicalParams, omega: Optional[float] = None,
                  order: int = DEFAULT_ORDER, rule: str = DEFAULT_RULE) -> float:
    """Ensemble-averaged excited-state population at Raman detuning ``omega``
    (defaults to ``p.detuning_raman``)."""
    omega = p.detuning_raman if omega is None else omega
    v_z, w = velocity_nodes(p, order, rule)
    val, _ = _block(p, np.array([float(omega)]), v_z, w)
    return float(_finish(val, [omega])[0])


def rho33_terms(p: PhysicalParams, omega: Optional[float] = None,
                order: int = DEFAULT_ORDER, rule: str = DEFAULT_RULE):
    """The three contributions (entry-state, incoherent, coherent-chain)."""
    omega = p.detuning_raman if omega is None else omega
    v_z, w = velocity_nodes(p, order, rule)
    _, (t1, t2, t3), _ = _block(p, np.array([float(omega)]), v_z, w, terms=True)
    return float(t1[0]), float(t2[0]), float(t3[0])


def _sweep_chunk(args):
    p, omegas, order, rule = args
    v_z, w = velocity_nodes(p, order, rule)
    try:
        vals, notes = _block(p, omegas, v_z, w)
    except Exception as exc:
        raise type(exc)(f"{exc} (Omega block {omegas[0]:.6g}..{omegas[-1]:.6g} rad/s)") from exc
    return vals, len(notes)


def sweep(p: PhysicalParams, omegas: Sequence[float], order: int = DEFAULT_ORDER,
          rule: str = DEFAULT_RULE, workers: int = 1) -> Spectrum:
    """<rho33> on a strictly increasing Raman-detuning grid.

    The grid is cut into fixed blocks independent of ``workers``, so the result
    is bit-identical for any degree of parallelism.
    """
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim != 1 or len(omegas) < 1:
        raise ValueError("need a 1-D Omega grid")
    if np.any(np.diff(omegas) <= 0):
        raise ValueError("Omega grid must be strictly increasing")
    jobs = [(p, omegas[i:i + _CHUNK], order, rule) for i in range(0, len(omegas), _CHUNK)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_chunk, jobs))
    else:
        results = [_sweep_chunk(j) for j in jobs]
    vals = np.concatenate([r[0] for r in results])
    fallbacks = sum(r[1] for r in results)
    for i, v in enumerate(vals):
        if not np.isfinite(v) or v < -NEGATIVE_NOISE or v > 1:
            raise ValueError(f"<rho33> = {v!r} out of [0, 1] at Omega = {omegas[i]!r} rad/s")
    vals = np.where(vals < 0, 0.0, vals)
    meta = {
        "params": _param_dict(p),
        "quadrature_order": order,
        "velocity_rule": rule,
        "velocity_nodes": int(len(velocity_nodes(p, order, rule)[0])),
        "mode": "analytic",
        "fallback_nodes": int(fallbacks),
        "code_version": __version__,
    }
    return Spectrum(omegas, vals, meta)


def _param_dict(p: PhysicalParams) -> dict:
    from dataclasses import asdict
    return {k: float(v) for k, v in asdict(p).items()}


def rho33_no_elastic(p: PhysicalParams, omega: float, order=DEFAULT_ORDER, rule=DEFAULT_RULE):
    """Direct evaluation with no specular bounces (N = n = 0), used to
    cross-check the alpha -> 0 limit of the full chain:
    ``<rho33> = <U^T Gt> rho_b + <V> + <U^T (I - Gt) rho_S>`` with
    ``rho_b = (I - Gd <Gtau>)^-1 Gd <(I - Gtau) rho_S>``."""
    pp = p.with_(detuning_raman=float(omega), elastic_prob=0.0)
    v_z, w = velocity_nodes(pp, order, rule)
    props = averaged_propagators(pp, v_z)
    beam = beam_generator(pp, v_z)
    rho_s = stationary_state(beam)
    ro = readout(pp, v_z)
    C = np.einsum("n,nij,nj->i", w, _I3 - props.G_tau, rho_s)
    D = np.einsum("n,nij->ij", w, props.G_tau)
    rho_b = np.linalg.solve(_I3 - props.G_tau_d @ D, props.G_tau_d @ C)
    uGt = np.einsum("ni,nij->nj", ro.U, props.G_t)
    return float(np.einsum("n,nj,j->", w, uGt, rho_b) + np.sum(w * ro.V)
                 + np.einsum("n,ni,ni->", w, ro.U, rho_s) - np.einsum("n,nj,nj->", w, uGt, rho_s))

