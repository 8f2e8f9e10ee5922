"""Multi-scale description of a resonance dip.

A CPT dip is a superposition of components of very different widths. On a
logarithmic frequency axis each component adds a bump to the slope
``q(w) = dS/d ln w`` centred near its half width, so the widths present in a
spectrum are the inflection points of ``S`` versus ``ln w``: sign changes of its
second difference where ``q`` has a local maximum.

Standalone analysis labels the innermost scale as the narrow peak, the
outermost as the pedestal, and anything in between as intermediate. With two
scales this cannot tell a narrow peak from an intermediate one, so
:func:`report_structure` also accepts a reference spectrum (same cell, beam and
field, no elastic wall collisions). Scales are then matched against the
reference ones, and depth that moved to scales strictly between the reference
narrow and pedestal widths counts as intermediate structure even when it
merges with the pedestal bump.

All thresholds are keyword arguments and are echoed in the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

LOG_POINTS = 512


@dataclass(frozen=True)
class StructureReport:
    """Result of :func:`report_structure`.

    Widths and scales are angular frequencies (rad/s). Depths are in units of
    the spectrum. ``redistribution`` is NaN without a reference.
    """

    baseline: float
    total_depth: float
    noise_floor: float
    scales: tuple
    narrow_peak: bool
    pedestal: bool
    intermediate: bool
    narrow_depth: float
    narrow_hwhm: float
    pedestal_depth: float
    redistribution: float
    flat: bool
    thresholds: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["scales"] = list(self.scales)
        return d


def analysis_grid(span: float, n: int = 401, beta: float = 8.0) -> np.ndarray:
    """Symmetric grid ``span * sinh(beta u) / sinh(beta)`` for ``u`` uniform in
    [-1, 1]. Point density near the centre is ``sinh(beta)/beta`` times that
    of a uniform grid, so widths from ~1e-3 span up to span are resolved.
    ``n`` is forced odd so that 0 is on the grid."""
    if span <= 0:
        raise ValueError("span must be positive")
    if n < 5:
        raise ValueError("need at least 5 points")
    n = n | 1
    u = np.linspace(-1.0, 1.0, n)
    g = span * np.sinh(beta * u) / np.sinh(beta)
    g[n // 2] = 0.0
    return 0.5 * (g - g[::-1])


def _fold(omega, S):
    omega = np.asarray(omega, dtype=float)
    S = np.asarray(S, dtype=float)
    if omega.ndim != 1 or len(omega) < 5:
        raise ValueError("need a 1-D grid with at least 5 points")
    scale = np.abs(omega).max()
    if np.abs(omega + omega[::-1]).max() > 1e-9 * scale:
        raise ValueError("report_structure needs a grid symmetric about 0")
    pos = omega > 0
    w = omega[pos]
    Sp = 0.5 * (S[pos] + S[::-1][pos])
    i0 = np.argmin(np.abs(omega))
    return w, Sp, float(S[i0])


def _noise(w, Sp, outer, meta):
    if meta and "stderr" in meta:
        return float(np.median(meta["stderr"]))
    y = Sp[outer]
    if len(y) >= 5:
        resid = np.diff(y, 2) / np.sqrt(6.0)
        mad = np.median(np.abs(resid - np.median(resid))) / 0.6745
    else:
        mad = 0.0
    return float(max(mad, 1e-12 * np.abs(Sp).max()))


def _slope_profile(w, Sp, depth, smoothing):
    x = np.linspace(np.log(w[0]), np.log(w[-1]), LOG_POINTS)
    S = PchipInterpolator(np.log(w), Sp)(x)
    q = np.gradient(S, x) / depth
    q = gaussian_filter1d(q, smoothing / (x[1] - x[0]), mode="nearest")
    return x, S, q


def _scale_peaks(q, prominence):
    # pad so that a slope still rising at the grid edge counts as a scale
    pad = np.concatenate([[q.min() - 1.0], q, [q.min() - 1.0]])
    idx, _ = find_peaks(pad, prominence=prominence)
    return idx - 1


@dataclass
class _Profile:
    w: np.ndarray
    Sp: np.ndarray
    S0: float
    baseline: float
    depth: float
    noise: float
    x: np.ndarray = None
    S: np.ndarray = None
    q: np.ndarray = None
    peaks: np.ndarray = None


def _profile(spectrum, baseline_fraction, smoothing, prominence):
    meta = getattr(spectrum, "meta", None)
    w, Sp, S0 = _fold(spectrum.omega, spectrum.rho33)
    outer = w >= (1 - baseline_fraction) * w[-1]
    B = float(Sp[outer].mean())
    pr = _Profile(w, Sp, S0, B, B - S0, _noise(w, Sp, outer, meta))
    if pr.depth > 0:
        pr.x, pr.S, pr.q = _slope_profile(w, Sp, pr.depth, smoothing)
        pr.peaks = _scale_peaks(pr.q, prominence)
    return pr


def report_structure(spectrum, reference=None, *, baseline_fraction=0.2, presence_factor=3.0,
                     prominence=0.01, smoothing=0.15, match_factor=3.0,
                     lobe_threshold=0.02) -> StructureReport:
    """Pedestal depth, narrow-peak width and structure flags of a dip.

    Parameters
    ----------
    spectrum
        Object with ``omega`` (symmetric about 0) and ``rho33`` arrays; an
        optional ``meta["stderr"]`` array sets the noise floor.
    reference
        Same kind of object for the matching spectrum without elastic wall
        collisions, on the same grid. Enables scale matching and the
        redistribution test.
    baseline_fraction
        Outer fraction of the half-span whose mean is the baseline.
    presence_factor
        A component is present if its depth exceeds this many noise floors.
    prominence
        Minimum prominence of a slope bump, in units of total depth per e-fold.
    smoothing
        Gaussian smoothing of the slope, in e-folds of frequency.
    match_factor
        Two scales within this ratio are the same component.
    lobe_threshold
        Minimum fraction of the dip depth moved to intermediate scales.
    """
    thresholds = dict(baseline_fraction=baseline_fraction, presence_factor=presence_factor,
                      prominence=prominence, smoothing=smoothing, match_factor=match_factor,
                      lobe_threshold=lobe_threshold)
    pr = _profile(spectrum, baseline_fraction, smoothing, prominence)
    floor = presence_factor * pr.noise
    if pr.depth <= floor or pr.peaks is None or len(pr.peaks) == 0:
        return StructureReport(pr.baseline, pr.depth, pr.noise, (), False, False, False,
                               0.0, np.nan, 0.0, np.nan, True, thresholds)

    x, S, q, peaks = pr.x, pr.S, pr.q, pr.peaks
    scales = np.exp(x[peaks])
    k = len(peaks)

    # plateau between the innermost component and the rest
    if k >= 2:
        seg = slice(peaks[0], peaks[1] + 1)
        valley = peaks[0] + int(np.argmin(q[seg]))
        plateau = float(S[valley])
    else:
        plateau = pr.baseline
    inner_depth = plateau - pr.S0
    pedestal_depth = pr.baseline - plateau

    if reference is None:
        narrow = k >= 2 and inner_depth > floor
        intermediate = k >= 3
        redistribution = np.nan
    else:
        ref = _profile(reference, baseline_fraction, smoothing, prominence)
        if ref.peaks is None or len(ref.peaks) < 2:
            raise ValueError("reference spectrum shows fewer than two scales")
        if not np.array_equal(ref.w, pr.w):
            raise ValueError("reference must share the frequency grid")
        ref_narrow, ref_ped = ref.x[ref.peaks[0]], ref.x[ref.peaks[-1]]
        tol = np.log(match_factor)
        xs = x[peaks]
        narrow_like = np.abs(xs - ref_narrow) <= tol
        between = (xs > ref_narrow + tol) & (xs < ref_ped - tol)
        narrow = bool(narrow_like[:-1].any()) and inner_depth > floor if k >= 2 else False
        inside = (x > ref_narrow) & (x < ref_ped)
        lobe = np.clip(q - ref.q, 0.0, None)
        redistribution = float(lobe[inside].sum() * (x[1] - x[0]))
        intermediate = bool(between.any()) or redistribution >= lobe_threshold

    hwhm = np.nan
    if narrow:
        half = pr.S0 + 0.5 * inner_depth
        j = int(np.argmax(S >= half))
        if j > 0:
            hwhm = float(np.exp(np.interp(half, S[j - 1:j + 1], x[j - 1:j + 1])))
    return StructureReport(
        baseline=pr.baseline, total_depth=pr.depth, noise_floor=pr.noise,
        scales=tuple(float(s) for s in scales), narrow_peak=bool(narrow),
        pedestal=bool(pedestal_depth > floor or (k == 1 and not narrow)),
        intermediate=bool(intermediate), narrow_depth=float(inner_depth if narrow else 0.0),
        narrow_hwhm=hwhm, pedestal_depth=float(pedestal_depth), redistribution=redistribution,
        flat=False, thresholds=thresholds,
    )
