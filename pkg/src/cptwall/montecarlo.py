"""Direct simulation of atom histories.

Two modes:

``model-faithful``
    Each atom runs through independent cycles: a fresh longitudinal velocity,
    ``N`` elastic bounces drawn from ``P(N) = (1 - alpha) alpha**N``, then
    ``N + 1`` beam crossings separated by ``N`` dark chords, then one dark-regime
    stay. Durations are drawn from the same laws the averaging engine uses, so
    this is a stochastic check of the averaging algebra.

``exact-geometry``
    Straight chords in a disc of radius ``R`` around a coaxial beam of radius
    ``r``. Each wall hit is specular with probability ``alpha`` (impact angle,
    speed and ``v_z`` kept); otherwise the atom is re-emitted with a cosine
    angular law and fresh thermal velocities.

Both generators have the form ``-kappa I + M`` with ``M**3 = -s**2 M``, so the
propagator and its time integral are written in closed form
(Cayley-Hamilton) and evaluated for all atoms of a block at once. Each block of
``BLOCK_SIZE`` atoms owns a Philox stream keyed by ``(seed, block index)``, so
results do not depend on how blocks are spread over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

from .core import (PhysicalParams, beam_generator, is_physical, optical_factors, readout,
                   stationary_state)
from .distributions import sample_exact_tau, sample_exact_tau_prime, time_laws

BLOCK_SIZE = 2048
HIST_PER_ATOM = 8
MODES = ("model-faithful", "exact-geometry")
_HIST_KEYS = ("tau", "tau_prime", "tau_d", "N")


@dataclass(frozen=True)
class TrajectoryConfig:
    """Monte Carlo run settings.

    ``burn_in`` defaults to ``5 / Gamma`` and ``t_total`` to ``burn_in + 5 / Gamma``;
    both are filled in by :meth:`resolved`. ``time_law`` picks the duration laws
    of the model-faithful mode: ``"approx"`` (the fitted laws of the averaging
    engine) or ``"exact"`` (chord kinematics).
    """

    n_atoms: int = 10_000
    t_total: Optional[float] = None
    mode: Literal["model-faithful", "exact-geometry"] = "model-faithful"
    seed: int = 0
    burn_in: Optional[float] = None
    time_law: Literal["approx", "exact"] = "approx"
    check_physical: bool = False

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError("n_atoms must be an integer >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.time_law not in ("approx", "exact"):
            raise ValueError("time_law must be 'approx' or 'exact'")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.burn_in is not None and not self.burn_in >= 0:
            raise ValueError("burn_in must be >= 0")
        if self.t_total is not None:
            if not np.isfinite(self.t_total):
                raise ValueError("t_total must be finite")
            if self.t_total <= (self.burn_in or 0.0):
                raise ValueError("need t_total > burn_in")

    def resolved(self, p: PhysicalParams) -> "TrajectoryConfig":
        if self.burn_in is not None and self.t_total is not None:
            return self
        if p.gamma_ground <= 0 and (self.burn_in is None or self.t_total is None):
            raise ValueError("set burn_in and t_total explicitly when gamma_ground = 0")
        burn = self.burn_in if self.burn_in is not None else 5.0 / p.gamma_ground
        total = self.t_total if self.t_total is not None else burn + 5.0 / p.gamma_ground
        return replace(self, burn_in=burn, t_total=total)


@dataclass(frozen=True)
class EmpiricalCDF:
    """Sorted samples with the step-function CDF ``F(x) = #{s <= x} / n``."""

    samples: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.searchsorted(self.samples, x, side="right") / max(len(self.samples), 1)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_effective: int
    histograms: dict = field(default_factory=dict, repr=False)
    meta: dict = field(default_factory=dict, repr=False)


class _Recorder:
    """Running sums of every event plus the first ``cap`` events of each atom."""

    def __init__(self, n, cap):
        self.cap = cap
        self.count = {k: np.zeros(n, dtype=np.int64) for k in _HIST_KEYS}
        self.samples = {k: [] for k in _HIST_KEYS}
        self.total = {k: 0.0 for k in _HIST_KEYS}
        self.n = {k: 0 for k in _HIST_KEYS}
        self.minimum = {k: np.inf for k in _HIST_KEYS}

    def add(self, key, idx, values):
        if len(idx) == 0:
            return
        values = np.asarray(values, dtype=float)
        self.total[key] += math.fsum(values)
        self.n[key] += len(values)
        self.minimum[key] = min(self.minimum[key], float(values.min()))
        c = self.count[key]
        keep = c[idx] < self.cap
        self.samples[key].append(values[keep])
        c[idx] += 1

    def result(self):
        out = {}
        for k in _HIST_KEYS:
            s = np.concatenate(self.samples[k]) if self.samples[k] else np.zeros(0)
            out[k] = (s, self.total[k], self.n[k], self.minimum[k])
        return out


# --------------------------------------------------------------------------- closed-form propagation


def _apply_M(c, w, x):
    # M = [[0, 0, -4c], [0, 0, -w], [c, w, 0]]
    return np.stack([-4 * c * x[:, 2], -w * x[:, 2], c * x[:, 0] + w * x[:, 1]], axis=1)


def _evolve(kappa, c, w, x, T):
    """``exp((-kappa I + M) T) x`` for rows of ``x``."""
    s = np.sqrt(4 * c * c + w * w)
    st = s * T
    small = st < 1e-4
    s_safe = np.where(s > 1e-100, s, 1.0)
    a1 = np.where(small, T * (1 - st * st / 6), np.sin(st) / s_safe)
    a2 = np.where(small, 0.5 * T * T * (1 - st * st / 12), 2 * np.sin(0.5 * st) ** 2 / s_safe**2)
    y = _apply_M(c, w, x)
    z = _apply_M(c, w, y)
    return np.exp(-kappa * T)[:, None] * (x + a1[:, None] * y + a2[:, None] * z)


def _integral_coeffs(kappa, s, T):
    # int_0^T exp(-kappa t) [1, sin(st)/s, (1 - cos st)/s^2] dt
    zc = -kappa + 1j * s
    zT = zc * T
    tiny = np.abs(zT) < 1e-8
    zc_safe = np.where(tiny, 1.0, zc)
    q = np.where(tiny, T * (1 + 0.5 * zT), np.expm1(zT) / zc_safe)
    kT = kappa * T
    b0 = np.where(kT < 1e-8, T * (1 - 0.5 * kT), -np.expm1(-kT) / np.where(kappa > 0, kappa, 1.0))
    s_safe = np.where(s > 1e-100, s, 1.0)
    b1 = q.imag / s_safe
    b2 = (b0 - q.real) / s_safe**2
    return b0, b1, b2


def _beam_integral(kappa, c, w, x, T0, T1):
    """``int_{T0}^{T1} exp((-kappa I + M) t) x dt`` for rows of ``x``."""
    s = np.sqrt(4 * c * c + w * w)
    y = _apply_M(c, w, x)
    z = _apply_M(c, w, y)
    b = [hi - lo for hi, lo in zip(_integral_coeffs(kappa, s, T1), _integral_coeffs(kappa, s, T0))]
    return b[0][:, None] * x + b[1][:, None] * y + b[2][:, None] * z


class _BeamState:
    """Per-atom beam generator data for the current longitudinal velocity."""

    def __init__(self, p: PhysicalParams, omega: float, n: int):
        self.p, self.omega = p, omega
        self.kappa = np.zeros(n)
        self.c = np.zeros(n)
        self.w = np.zeros(n)
        self.rho_s = np.zeros((n, 3))
        self.U = np.zeros((n, 3))
        self.V = np.zeros(n)

    def set_velocity(self, idx, v_z):
        if len(idx) == 0:
            return
        p = self.p
        _, F, W, Delta = optical_factors(p, v_z)
        g = beam_generator(p.with_(detuning_raman=self.omega), v_z)
        self.kappa[idx] = W + p.gamma_ground
        self.c[idx] = F * p.rabi_1 * p.rabi_2 / p.gamma_prime
        self.w[idx] = self.omega - Delta
        self.rho_s[idx] = stationary_state(g)
        ro = readout(p, v_z)
        self.U[idx] = ro.U
        self.V[idx] = ro.V

    def step(self, idx, rho, dur, lo, hi):
        """Advance ``rho[idx]`` by ``dur`` in the beam; return ``int rho33 dt``
        over the part ``[lo, hi]`` (relative to the segment start) of it."""
        k, c, w = self.kappa[idx], self.c[idx], self.w[idx]
        d = rho[idx] - self.rho_s[idx]
        integ = _beam_integral(k, c, w, d, lo, hi)
        acc = (np.einsum("ij,ij->i", self.U[idx], self.rho_s[idx]) + self.V[idx]) * (hi - lo)
        acc = acc + np.einsum("ij,ij->i", self.U[idx], integ)
        rho[idx] = self.rho_s[idx] + _evolve(k, c, w, d, dur)
        return acc


def _dark_step(p, omega, rho, idx, dur):
    n = len(idx)
    rho[idx] = _evolve(np.full(n, p.gamma_ground), np.zeros(n), np.full(n, omega), rho[idx], dur)


def _window(t0, dur, burn, total):
    lo = np.clip(burn - t0, 0.0, dur)
    hi = np.clip(total - t0, 0.0, dur)
    return lo, np.maximum(hi, lo)


def _check(rho, cfg):
    if cfg.check_physical and not np.all(is_physical(rho, 1e-9)):
        raise AssertionError("Bloch vector left the physical region")


# --------------------------------------------------------------------------- sampling helpers


def _sample_vz(rng, p, n):
    return p.v_thermal / np.sqrt(2.0) * rng.standard_normal(n)


def _sample_vperp(rng, p, n):
    return p.v_thermal * np.sqrt(-np.log1p(-rng.random(n)))


def sample_entry(p: PhysicalParams, rng: np.random.Generator, size=None):
    """Entry of a beam-passing chord: impact angle ``phi`` with density
    ``R cos(phi) / r`` on ``[0, arcsin(r/R)]``, transverse speed from the 2-D
    Maxwell law and longitudinal speed from the 1-D one."""
    n = 1 if size is None else size
    phi = np.arcsin(p.beam_radius / p.cell_radius * rng.random(n))
    v_perp = _sample_vperp(rng, p, n)
    v_z = _sample_vz(rng, p, n)
    if size is None:
        return float(phi[0]), float(v_perp[0]), float(v_z[0])
    return phi, v_perp, v_z


def _make_rng(seed, block):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------- model-faithful mode

_BEAM, _CHORD, _DARK = 0, 1, 2


def _model_block(p, omega, cfg, n, rng):
    burn, total = cfg.burn_in, cfg.t_total
    alpha = p.elastic_prob
    laws = time_laws(p)
    if cfg.time_law == "exact":
        draw_tau = lambda k: sample_exact_tau(rng, k, p)
        draw_chord = lambda k: sample_exact_tau_prime(rng, k, p)
    else:
        draw_tau = lambda k: laws["tau"].sample(rng, k)
        draw_chord = lambda k: laws["tau_prime"].sample(rng, k)
    draw_dark = (lambda k: laws["tau_d"].sample(rng, k)) if alpha < 1 else None

    beam = _BeamState(p, omega, n)
    rec = _Recorder(n, HIST_PER_ATOM)
    rho = np.zeros((n, 3))
    t = np.zeros(n)
    num = np.zeros(n)
    den = np.zeros(n)
    phase = np.full(n, _BEAM)
    left = np.zeros(n, dtype=np.int64)

    def new_cycle(idx):
        beam.set_velocity(idx, _sample_vz(rng, p, len(idx)))
        if alpha >= 1:
            N = np.full(len(idx), np.iinfo(np.int64).max // 2)
        else:
            N = rng.geometric(1.0 - alpha, len(idx)) - 1
            rec.add("N", idx[t[idx] >= burn], N[t[idx] >= burn])
        left[idx] = N + 1

    new_cycle(np.arange(n))
    active = np.arange(n)
    while len(active):
        ph = phase[active]
        b = active[ph == _BEAM]
        if len(b):
            dur = draw_tau(len(b))
            rec.add("tau", b[t[b] >= burn], dur[t[b] >= burn])
            lo, hi = _window(t[b], dur, burn, total)
            num[b] += beam.step(b, rho, dur, lo, hi)
            den[b] += hi - lo
            t[b] += dur
            left[b] -= 1
            phase[b] = np.where(left[b] > 0, _CHORD, _DARK)
        ch = active[ph == _CHORD]
        if len(ch):
            dur = draw_chord(len(ch))
            rec.add("tau_prime", ch[t[ch] >= burn], dur[t[ch] >= burn])
            _dark_step(p, omega, rho, ch, dur)
            t[ch] += dur
            phase[ch] = _BEAM
        dk = active[ph == _DARK]
        if len(dk):
            dur = draw_dark(len(dk))
            rec.add("tau_d", dk[t[dk] >= burn], dur[t[dk] >= burn])
            _dark_step(p, omega, rho, dk, dur)
            t[dk] += dur
            phase[dk] = _BEAM
            new_cycle(dk)
        _check(rho[active], cfg)
        active = active[t[active] < total]
    return {"num": num, "den": den, "events": rec.result()}


# --------------------------------------------------------------------------- exact-geometry mode


def _exact_block(p, omega, cfg, n, rng, events=None):
    """Chord-by-chord simulation. With ``omega`` None only the kinematics run.

    If ``events`` is given, atoms run past ``t_total`` until each has recorded
    that many dark-regime stays starting after burn-in, so long stays are not
    censored by the end of the window.
    """
    burn, total = cfg.burn_in, cfg.t_total
    R, r, alpha = p.cell_radius, p.beam_radius, p.elastic_prob
    track = omega is not None
    beam = _BeamState(p, omega, n) if track else None
    rec = _Recorder(n, HIST_PER_ATOM if events is None else events)
    rho = np.zeros((n, 3))
    t = np.zeros(n)
    num = np.zeros(n)
    den = np.zeros(n)

    phi = np.arcsin(rng.random(n))
    v = _sample_vperp(rng, p, n)
    v_z = _sample_vz(rng, p, n)
    phi0 = phi.copy()
    if track:
        beam.set_velocity(np.arange(n), v_z)
    last_exit = np.full(n, np.nan)
    stuck = np.ones(n, dtype=bool)
    passes = np.zeros(n, dtype=np.int64)
    regime_start = np.full(n, np.nan)

    def running(idx):
        if events is None:
            return idx[t[idx] < total]
        return idx[rec.count["tau_d"][idx] < events]

    active = np.arange(n)
    while len(active):
        a = active
        s = np.sin(phi[a])
        chord = 2 * R * np.cos(phi[a])
        b_len = 2 * np.sqrt(np.clip((r - R * s) * (r + R * s), 0.0, None))
        half = 0.5 * (chord - b_len) / v[a]
        tb = b_len / v[a]
        t_in = t[a] + half
        hit = b_len > 0

        # bookkeeping at beam entry
        h = a[hit]
        if len(h):
            tin_h = t_in[hit]
            gap = tin_h - last_exit[h]
            seen = ~np.isnan(gap) & (last_exit[h] >= burn)
            new_regime = stuck[h]
            d_idx = h[seen & new_regime]
            rec.add("tau_d", d_idx, gap[seen & new_regime])
            rec.add("tau_prime", h[seen & ~new_regime], gap[seen & ~new_regime])
            done = new_regime & (regime_start[h] >= burn)
            rec.add("N", h[done], passes[h][done] - 1)
            passes[h] = np.where(new_regime, 1, passes[h] + 1)
            regime_start[h] = np.where(new_regime, tin_h, regime_start[h])
            after = tin_h >= burn
            rec.add("tau", h[after], tb[hit][after])
            stuck[h] = False
            last_exit[h] = tin_h + tb[hit]

        lo, hi = _window(t_in, tb, burn, total)
        den[a] += hi - lo
        if track:
            _dark_step(p, omega, rho, a, half)
            if len(h):
                num[h] += beam.step(h, rho, tb[hit], lo[hit], hi[hit])
            _dark_step(p, omega, rho, a, half)
            _check(rho[a], cfg)
        t[a] += 2 * half + tb

        # wall collision
        if alpha < 1:
            stick = a[rng.random(len(a)) >= alpha]
            k = len(stick)
            phi[stick] = np.arcsin(rng.random(k))
            v[stick] = _sample_vperp(rng, p, k)
            v_z[stick] = _sample_vz(rng, p, k)
            stuck[stick] = True
            if track:
                beam.set_velocity(stick, v_z[stick])
        active = running(a)
    return {"num": num, "den": den, "events": rec.result(), "phi0": phi0, "phi": phi}


# --------------------------------------------------------------------------- drivers


def _run_block(args):
    p, omega, cfg, block, n, events = args
    rng = _make_rng(cfg.seed, block)
    if cfg.mode == "model-faithful":
        return _model_block(p, omega, cfg, n, rng)
    return _exact_block(p, omega, cfg, n, rng, events)


def _run(p, omega, cfg, workers=1, events=None):
    sizes = [min(BLOCK_SIZE, cfg.n_atoms - i) for i in range(0, cfg.n_atoms, BLOCK_SIZE)]
    jobs = [(p, omega, cfg, i, n, events) for i, n in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_block, jobs))
    return [_run_block(j) for j in jobs]


def _merge_events(blocks):
    out = {}
    for k in _HIST_KEYS:
        parts = [b["events"][k] for b in blocks]
        samples = np.sort(np.concatenate([s for s, *_ in parts]))
        n = sum(c for _, _, c, _ in parts)
        total = math.fsum(tot for _, tot, _, _ in parts)
        out[k] = {
            "cdf": EmpiricalCDF(samples),
            "mean": total / n if n else np.nan,
            "count": n,
            "min": min((m for *_, m in parts), default=np.inf),
        }
    return out


def simulate_atom(p: PhysicalParams, omega: float, cfg: TrajectoryConfig,
                  rng: np.random.Generator):
    """One trajectory. Returns ``(int rho33 dt, beam time)`` accumulated over
    beam segments after burn-in."""
    cfg = replace(cfg.resolved(p), n_atoms=1)
    if cfg.mode == "model-faithful":
        out = _model_block(p, omega, cfg, 1, rng)
    else:
        out = _exact_block(p, omega, cfg, 1, rng)
    return float(out["num"][0]), float(out["den"][0])


def estimate_rho33(p: PhysicalParams, omega: float, cfg: TrajectoryConfig,
                   workers: int = 1) -> McEstimate:
    """Beam-time weighted ensemble mean of rho33 (ratio estimator).

    The standard error linearises the ratio over atoms:
    ``se = sqrt(sum (num_i - m den_i)**2 / (n (n - 1))) / mean(den)``.
    """
    cfg = cfg.resolved(p)
    blocks = _run(p, float(omega), cfg, workers)
    num = np.concatenate([b["num"] for b in blocks])
    den = np.concatenate([b["den"] for b in blocks])
    n = len(num)
    D = math.fsum(den)
    if D <= 0:
        raise ValueError("no beam time accumulated; increase t_total or n_atoms")
    m = math.fsum(num) / D
    if n > 1:
        resid = num - m * den
        se = math.sqrt(math.fsum(resid * resid) / (n * (n - 1))) / (D / n)
    else:
        se = np.nan
    hist = {k: v["cdf"] for k, v in _merge_events(blocks).items()}
    meta = {"mode": cfg.mode, "n_atoms": cfg.n_atoms, "seed": cfg.seed, "burn_in": cfg.burn_in,
            "t_total": cfg.t_total, "time_law": cfg.time_law, "block_size": BLOCK_SIZE}
    return McEstimate(m, se, int(np.count_nonzero(den > 0)), hist, meta)


def beam_time_fraction(p: PhysicalParams, cfg: TrajectoryConfig, workers: int = 1):
    """Exact-geometry fraction of post-burn-in time spent in the beam, with its
    standard error over atoms."""
    cfg = replace(cfg.resolved(p), mode="exact-geometry")
    blocks = _run(p, None, cfg, workers)
    frac = np.concatenate([b["den"] for b in blocks]) / (cfg.t_total - cfg.burn_in)
    se = frac.std(ddof=1) / np.sqrt(len(frac)) if len(frac) > 1 else np.nan
    return float(frac.mean()), float(se)


def empirical_tau_dark(p: PhysicalParams, cfg: TrajectoryConfig, events_per_atom: int = 4,
                       workers: int = 1):
    """Measured dark-regime durations in exact geometry.

    A dark-regime stay runs from a beam exit to the next beam entry when at
    least one sticking collision happened in between. Each atom records its
    first ``events_per_atom`` stays that begin after burn-in.

    Returns ``(cdf, mean, minimum)``.
    """
    if cfg.mode != "exact-geometry":
        raise ValueError("empirical_tau_dark needs mode='exact-geometry'")
    if p.elastic_prob >= 1:
        raise ValueError("no dark-regime stays when alpha = 1")
    cfg = cfg.resolved(p)
    ev = _merge_events(_run(p, None, cfg, workers, events=events_per_atom))["tau_d"]
    return ev["cdf"], ev["mean"], ev["min"]
