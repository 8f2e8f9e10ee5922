"""Small dense linear algebra, special functions and quadrature rules.

Everything here works on stacks of 3x3 matrices (shape ``(..., 3, 3)``) so the
averaging engine can push all velocity nodes through LAPACK in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

COND_LIMIT = 1e8


class DefectiveMatrixError(np.linalg.LinAlgError):
    """Eigenvector matrix too ill-conditioned for the spectral route."""


def dawson(x):
    """Dawson integral D(x) = exp(-x**2) * int_0^x exp(t**2) dt.

    Backed by the Cephes rational approximations in :func:`scipy.special.dawsn`
    (relative error ~1e-15 on the real line).
    """
    return scipy.special.dawsn(x)


@dataclass(frozen=True)
class EigenSystem:
    """Spectral data of a (stack of) real 3x3 generator(s).

    ``matrix == X @ diag(eigenvalues) @ X_inv``. Eigenvalues are ordered real
    first, then the conjugate pair with positive imaginary part leading.
    """

    eigenvalues: np.ndarray
    X: np.ndarray
    X_inv: np.ndarray
    cond: np.ndarray

    def apply(self, values) -> np.ndarray:
        """Return ``X diag(values) X_inv`` (complex), broadcasting over stacks."""
        return np.einsum("...ij,...j,...jk->...ik", self.X, values, self.X_inv)

    def apply_real(self, values, tol=1e-10) -> np.ndarray:
        """Like :meth:`apply` but return the real part, checking the imaginary
        residue left over by conjugate-pair cancellation."""
        M = self.apply(values)
        scale = np.maximum(np.abs(M).max(axis=(-2, -1), keepdims=True), 1.0)
        if np.any(np.abs(M.imag) > tol * scale):
            raise ValueError("spectral function of a real matrix is not real")
        return M.real


def _conjugate_order(lam):
    # real eigenvalues first (descending), then +Im before -Im
    scale = np.maximum(np.abs(lam).max(axis=-1, keepdims=True), 1e-300)
    is_complex = np.abs(lam.imag) > 1e-12 * scale
    key = np.where(is_complex, 1.0, 0.0) * 4.0 - np.where(
        is_complex, np.sign(lam.imag), 0.0
    )
    # stable sort on (class, real part) reproduces the ordering above
    order = np.lexsort((-lam.real, key), axis=-1)
    return order


def eigen_decompose(A, check=True) -> EigenSystem:
    """Eigendecomposition of real 3x3 matrices.

    The mean of the diagonal is removed before calling LAPACK and added back to
    the eigenvalues. Beam and dark generators are ``-(W + Gamma) I`` plus a
    traceless coupling, so the shifted problem keeps its eigenvectors
    well-determined even when the coupling is tiny compared to the decay.

    Raises
    ------
    DefectiveMatrixError
        If ``check`` and any eigenvector matrix has condition number
        >= ``COND_LIMIT``.
    """
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3), got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite matrix entries")
    shift = np.trace(A, axis1=-2, axis2=-1) / 3.0
    M = A - shift[..., None, None] * np.eye(3)
    lam, X = np.linalg.eig(M)
    lam = lam.astype(complex)
    X = X.astype(complex)
    order = _conjugate_order(lam)
    lam = np.take_along_axis(lam, order, axis=-1) + shift[..., None]
    X = np.take_along_axis(X, order[..., None, :], axis=-1)
    cond = np.linalg.cond(X)
    cond = np.where(np.isfinite(cond), cond, np.inf)
    if check and np.any(cond >= COND_LIMIT):
        raise DefectiveMatrixError(
            f"eigenvector matrix condition {np.max(cond):.3g} >= {COND_LIMIT:g}"
        )
    with np.errstate(all="ignore"):
        X_inv = np.linalg.inv(X)
    return EigenSystem(lam, X, X_inv, cond)


def expm(A, t=1.0) -> np.ndarray:
    """Matrix exponential ``exp(A t)`` by scaling and squaring with Pade
    approximants (scipy), for single matrices or stacks."""
    A = np.asarray(A)
    return scipy.linalg.expm(A * t)


def expm_spectral(es: EigenSystem, t) -> np.ndarray:
    """``exp(A t)`` through an existing eigensystem; ``t`` broadcasts against
    the stack shape."""
    t = np.asarray(t, dtype=float)
    return es.apply_real(np.exp(es.eigenvalues * t[..., None]))


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for ``int w(x) h(x) dx ~= sum(weights * h(nodes))``.

    For ``kind == "gauss-hermite"`` the weight function is ``exp(-x**2)``.
    For ``kind == "doppler"`` the weight is the normalised Maxwell density
    ``exp(-x**2) / sqrt(pi)`` (weights sum to ~1).
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return len(self.nodes)


def gauss_hermite(n: int) -> QuadratureRule:
    if not 1 <= n <= 256:
        raise ValueError(f"Gauss-Hermite order must be in [1, 256], got {n}")
    x, w = np.polynomial.hermite.hermgauss(n)
    return QuadratureRule(np.asarray(x, float), np.asarray(w, float), "gauss-hermite")


def _gauss_legendre_panels(edges, n):
    t, w = np.polynomial.legendre.leggauss(n)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (t + 1.0))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def doppler_rule(width: float, center: float = 0.0, n: int = 16,
                 core: float = None, x_max: float = 9.0) -> QuadratureRule:
    """Velocity rule for Maxwell-weighted integrands carrying a narrow
    Lorentzian factor ``1 / (1 + ((x - center) / width)**2)``.

    Inside ``|x - center| < core`` the abscissa is ``x = center + width*tan(u)``,
    which flattens the Lorentzian; outside, Gauss-Legendre panels with
    geometrically growing length follow the power-law wings out to the
    Gaussian cut-off ``x_max``. ``n`` is the number of points per panel.
    The default ``core`` is ``min(0.25, 30 * width)``: a wider tan-mapped core
    would stretch the Gaussian factor across too few nodes.
    """
    if width <= 0:
        raise ValueError("Lorentzian width must be positive")
    if n < 2:
        raise ValueError("need at least 2 points per panel")
    if core is None:
        core = min(0.25, 30.0 * width)
    u_max = np.arctan(core / width)
    u, wu = _gauss_legendre_panels(np.linspace(-u_max, u_max, 5), n)
    x_in = center + width * np.tan(u)
    w_in = wu * width / np.cos(u) ** 2

    reach = max(x_max + abs(center), 2.0 * core)
    edges = [core]
    while edges[-1] < reach:
        edges.append(min(2.0 * edges[-1], reach))
    y, wy = _gauss_legendre_panels(np.asarray(edges), n)
    x = np.concatenate([center - y[::-1], x_in, center + y])
    w = np.concatenate([wy[::-1], w_in, wy])
    w = w * np.exp(-x * x) / np.sqrt(np.pi)
    return QuadratureRule(x, w, "doppler")
