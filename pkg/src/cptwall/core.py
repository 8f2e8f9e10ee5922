"""Reduced Lambda-atom dynamics inside and outside the laser beam.

After adiabatic elimination of the excited state the ground-state block is
described by the three real numbers ``(f, R, J)``:

    f = rho11 - rho22,   R = Re rho12,   J = Im rho12

and evolves as ``d/dt rho = A rho + B`` inside the beam and ``d/dt rho = A' rho``
in the dark. All functions broadcast over an array of longitudinal velocities,
returning stacks of matrices with shape ``(..., 3, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Literal

import numpy as np
from scipy import constants

from .numerics import EigenSystem, eigen_decompose, expm, DefectiveMatrixError

RB87_MASS = 86.909180527 * constants.atomic_mass
RB87_D1_WAVENUMBER = 2 * np.pi / 794.978851e-9


@dataclass(frozen=True)
class PhysicalParams:
    """Cell, atom and field constants (SI units, rates in 1/s).

    Defaults are a 87Rb vapour at 20 C in a 5 mm radius cell with a 1.5 mm
    beam, equal Rabi frequencies of 7.7e5 1/s and purely sticking walls.
    ``gamma_prime`` is derived and cannot be set directly.
    """

    gamma_ground: float = 300.0
    gamma_excited: float = 3.6e7
    laser_linewidth: float = 0.0
    rabi_1: float = 7.7e5
    rabi_2: float = 7.7e5
    detuning_optical: float = 0.0
    detuning_raman: float = 0.0
    wavenumber: float = RB87_D1_WAVENUMBER
    temperature: float = 293.15
    atom_mass: float = RB87_MASS
    cell_radius: float = 5e-3
    beam_radius: float = 1.5e-3
    elastic_prob: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v!r}")
        for name in ("gamma_ground", "gamma_excited", "laser_linewidth", "rabi_1", "rabi_2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gamma_prime <= 0:
            raise ValueError("optical coherence decay (gamma + linewidth)/2 must be > 0")
        if self.wavenumber <= 0:
            raise ValueError("wavenumber must be > 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.atom_mass <= 0:
            raise ValueError("atom_mass must be > 0")
        if not 0 < self.beam_radius <= self.cell_radius:
            raise ValueError("need 0 < beam_radius <= cell_radius")
        if not 0 <= self.elastic_prob <= 1:
            raise ValueError("elastic_prob must lie in [0, 1]")

    @property
    def gamma_prime(self) -> float:
        return 0.5 * (self.gamma_excited + self.laser_linewidth)

    @property
    def v_thermal(self) -> float:
        """Most probable speed sqrt(2 kB T / m)."""
        return float(np.sqrt(2 * constants.k * self.temperature / self.atom_mass))

    def with_(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class BlochVector:
    f: float
    R: float
    J: float

    @classmethod
    def from_array(cls, a) -> "BlochVector":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.f, self.R, self.J])

    def is_physical(self, tol=1e-12) -> bool:
        """|f| <= 1 and R^2 + J^2 <= (1 - f^2)/4 (positivity of the ground block)."""
        return is_physical(self.as_array(), tol)


def is_physical(rho, tol=1e-12):
    rho = np.asarray(rho, dtype=float)
    f, R, J = rho[..., 0], rho[..., 1], rho[..., 2]
    return (np.abs(f) <= 1 + tol) & (R * R + J * J <= (1 - f * f) / 4 + tol)


@dataclass(frozen=True)
class AffineGenerator:
    """``d/dt rho = matrix @ rho + drive``; ``drive`` is zero in the dark zone."""

    matrix: np.ndarray
    drive: np.ndarray
    zone: Literal["beam", "dark"]
    _eig: list = field(default_factory=list, repr=False, compare=False)

    def eigensystem(self) -> EigenSystem:
        if not self._eig:
            self._eig.append(eigen_decompose(self.matrix))
        return self._eig[0]


@dataclass(frozen=True)
class Readout:
    """Excited-state population ``rho33 = U . rho + V``."""

    U: np.ndarray
    V: np.ndarray

    def __call__(self, rho) -> np.ndarray:
        return np.einsum("...i,...i->...", self.U, np.asarray(rho)) + self.V


def optical_factors(p: PhysicalParams, v_z):
    """Doppler-shifted optical response of a velocity class.

    Returns ``(G, F, W, Delta)`` where ``G + iF = g' / (g' - i(Omega_L - k v_z))``,
    ``W`` is the optical pumping rate and ``Delta`` the light shift.
    """
    gp = p.gamma_prime
    z = gp / (gp - 1j * (p.detuning_optical - p.wavenumber * np.asarray(v_z, dtype=float)))
    G, F = z.real, z.imag
    W = G * (p.rabi_1**2 + p.rabi_2**2) / gp
    Delta = F * (p.rabi_1**2 - p.rabi_2**2) / gp
    return G, F, W, Delta


def beam_generator(p: PhysicalParams, v_z=0.0) -> AffineGenerator:
    G, F, W, Delta = optical_factors(p, v_z)
    gp = p.gamma_prime
    v12 = p.rabi_1 * p.rabi_2 / gp
    decay = -(W + p.gamma_ground)
    rot = p.detuning_raman - Delta
    shape = np.shape(G)
    A = np.zeros(shape + (3, 3))
    A[..., 0, 0] = A[..., 1, 1] = A[..., 2, 2] = decay
    A[..., 0, 2] = -4 * F * v12
    A[..., 1, 2] = -rot
    A[..., 2, 0] = F * v12
    A[..., 2, 1] = rot
    B = np.zeros(shape + (3,))
    B[..., 0] = G * (p.rabi_2**2 - p.rabi_1**2) / gp
    B[..., 1] = -G * v12
    return AffineGenerator(A, B, "beam")


def dark_generator(p: PhysicalParams) -> AffineGenerator:
    Gam, Om = p.gamma_ground, p.detuning_raman
    A = np.array([[-Gam, 0.0, 0.0], [0.0, -Gam, -Om], [0.0, Om, -Gam]])
    return AffineGenerator(A, np.zeros(3), "dark")


def readout(p: PhysicalParams, v_z=0.0) -> Readout:
    if p.gamma_excited <= 0:
        raise ValueError("readout needs gamma_excited > 0")
    G, _, W, _ = optical_factors(p, v_z)
    den = p.gamma_excited * p.gamma_prime
    U = np.zeros(np.shape(G) + (3,))
    U[..., 0] = G * (p.rabi_1**2 - p.rabi_2**2) / den
    U[..., 1] = 4 * G * p.rabi_1 * p.rabi_2 / den
    return Readout(U, np.asarray(W / p.gamma_excited))


def stationary_state(g: AffineGenerator) -> np.ndarray:
    """Fixed point ``-A^{-1} B`` (stacked). A zero drive returns zeros without
    requiring an invertible matrix."""
    B = np.asarray(g.drive, dtype=float)
    if not np.any(B):
        return np.zeros_like(B)
    try:
        return -np.linalg.solve(g.matrix, B[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular generator: no unique stationary state") from exc


def propagate(g: AffineGenerator, rho0, dt) -> np.ndarray:
    """Exact evolution over ``dt`` seconds.

    ``rho(dt) = rho_S + exp(A dt) (rho0 - rho_S)``; the spectral route is used
    when the eigenvectors are well conditioned, Pade otherwise.
    """
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise ValueError("dt must be >= 0")
    rho0 = np.asarray(rho0, dtype=float)
    rho_s = stationary_state(g)
    try:
        E = g.eigensystem()
        P = E.apply_real(np.exp(E.eigenvalues * dt[..., None]))
    except DefectiveMatrixError:
        P = expm(g.matrix * dt[..., None, None]) if dt.ndim else expm(g.matrix, float(dt))
    return rho_s + np.einsum("...ij,...j->...i", P, rho0 - rho_s)
