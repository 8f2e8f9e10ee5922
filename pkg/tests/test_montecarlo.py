from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad_vec

from cptwall.averaging import rho33_average
from cptwall.core import PhysicalParams, beam_generator, dark_generator, propagate, readout
from cptwall.distributions import (F_prime_approx, PI32, chord_time, ell_perp, f_t_approx,
                                   geometry)
from cptwall.montecarlo import (BLOCK_SIZE, TrajectoryConfig, _beam_integral, _evolve,
                                _exact_block, _make_rng, beam_time_fraction, empirical_tau_dark,
                                estimate_rho33, sample_entry, simulate_atom)

P0 = PhysicalParams()


def generator_pieces(p, v_z):
    g = beam_generator(p, v_z)
    A = g.matrix
    kappa = -A[0, 0]
    return g, np.array([kappa]), np.array([A[2, 0]]), np.array([A[2, 1]])


class TestClosedForm:
    def test_evolve_matches_propagate(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = P0.with_(detuning_raman=rng.uniform(-1e5, 1e5), rabi_1=rng.uniform(1e5, 2e6))
            p = p.with_(rabi_2=p.rabi_1 * rng.uniform(0.5, 2))
            v = rng.normal(0, 200)
            g, k, c, w = generator_pieces(p, v)
            x0 = rng.uniform(-0.3, 0.3, 3)
            T = rng.uniform(0, 3e-3)
            rs = np.linalg.solve(g.matrix, -g.drive)
            got = rs + _evolve(k, c, w, (x0 - rs)[None], np.array([T]))[0]
            np.testing.assert_allclose(got, propagate(g, x0, T), rtol=0, atol=1e-12)
            dk = _evolve(np.array([p.gamma_ground]), np.zeros(1), np.array([p.detuning_raman]),
                         x0[None], np.array([T]))[0]
            np.testing.assert_allclose(dk, propagate(dark_generator(p), x0, T), atol=1e-12)

    def test_short_times(self):
        g, k, c, w = generator_pieces(P0.with_(detuning_raman=300.0), 40.0)
        x0 = np.array([[0.1, -0.2, 0.05]])
        for T in (0.0, 1e-12, 1e-9):
            ref = propagate(type(g)(g.matrix, np.zeros(3), "beam"), x0[0], T)
            np.testing.assert_allclose(_evolve(k, c, w, x0, np.array([T]))[0], ref, atol=1e-15)

    def test_beam_integral(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            p = P0.with_(detuning_raman=rng.uniform(-3e4, 3e4))
            g, k, c, w = generator_pieces(p, rng.normal(0, 200))
            x = rng.uniform(-0.3, 0.3, 3)
            T0, T1 = sorted(rng.uniform(0, 2e-4, 2))
            got = _beam_integral(k, c, w, x[None], np.array([T0]), np.array([T1]))[0]
            hom = type(g)(g.matrix, np.zeros(3), "beam")
            ref, _ = quad_vec(lambda t: propagate(hom, x, t), T0, T1, epsabs=1e-16, epsrel=1e-12)
            np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-18)


class TestSampling:
    def test_scalar_and_ranges(self):
        rng = np.random.default_rng(3)
        phi, vp, vz = sample_entry(P0, rng)
        assert isinstance(phi, float) and 0 <= phi <= np.arcsin(0.3) and vp > 0
        phi, vp, vz = sample_entry(P0, rng, 1000)
        assert phi.shape == (1000,)

    def test_full_beam_angle_law(self):
        rng = np.random.default_rng(4)
        phi, _, _ = sample_entry(P0.with_(beam_radius=P0.cell_radius), rng, 200_000)
        assert phi.min() >= 0 and phi.max() < np.pi / 2
        # density cos(phi) on [0, pi/2) has CDF sin(phi)
        assert stats.kstest(phi, np.sin).pvalue > 1e-3

    def test_speed_moments(self):
        rng = np.random.default_rng(5)
        _, vp, vz = sample_entry(P0, rng, 1_000_000)
        vT = P0.v_thermal
        assert abs(vp.mean() - vT * np.sqrt(np.pi) / 2) < 3 * vp.std() / 1e3
        assert abs(vz.mean()) < 3 * vz.std() / 1e3
        # 1-D Maxwell exp(-v^2/v_T^2): variance v_T^2 / 2
        assert vz.var() == pytest.approx(vT**2 / 2, rel=5e-3)

    def test_chord_times(self):
        rng = np.random.default_rng(6)
        phi, vp, _ = sample_entry(P0, rng, 200_000)
        from cptwall.distributions import F_tau
        tau = chord_time(vp, phi, P0)
        assert stats.kstest(tau, lambda t: F_tau(t, P0)).pvalue > 1e-3


class TestConfig:
    def test_defaults(self):
        cfg = TrajectoryConfig().resolved(P0)
        assert cfg.burn_in == pytest.approx(5 / 300) and cfg.t_total == pytest.approx(10 / 300)

    @pytest.mark.parametrize("kw", [dict(n_atoms=0), dict(mode="x"), dict(seed=-1),
                                    dict(seed=2**64), dict(burn_in=1.0, t_total=0.5),
                                    dict(time_law="y"), dict(t_total=np.inf)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrajectoryConfig(**kw)


FAST = TrajectoryConfig(n_atoms=400, burn_in=2e-3, t_total=5e-3, seed=11)


class TestSimulation:
    @pytest.mark.parametrize("mode", ["model-faithful", "exact-geometry"])
    def test_no_light(self, mode):
        p = P0.with_(rabi_1=0.0, rabi_2=0.0, elastic_prob=0.5)
        cfg = replace(FAST, mode=mode)
        num, den = simulate_atom(p, 0.0, cfg, np.random.default_rng(0))
        assert num == 0.0 and den > 0
        est = estimate_rho33(p, 0.0, cfg)
        assert est.mean == 0.0 and est.std_error == 0.0

    def test_full_beam_fraction(self):
        p = P0.with_(beam_radius=P0.cell_radius, elastic_prob=0.3)
        cfg = replace(FAST, mode="exact-geometry")
        _, den = simulate_atom(p, 0.0, cfg, np.random.default_rng(1))
        assert den == pytest.approx(cfg.t_total - cfg.burn_in, rel=1e-12)

    def test_alpha_zero_has_no_bounces(self):
        est = estimate_rho33(P0, 0.0, FAST)
        N = est.histograms["N"].samples
        assert len(N) > 0 and np.all(N == 0)
        assert len(est.histograms["tau_prime"]) == 0

    @pytest.mark.parametrize("mode", ["model-faithful", "exact-geometry"])
    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
    def test_physical(self, mode, alpha):
        p = P0.with_(elastic_prob=alpha, detuning_raman=2 * np.pi * 300)
        cfg = replace(FAST, mode=mode, check_physical=True, n_atoms=100)
        est = estimate_rho33(p, p.detuning_raman, cfg)
        assert 0 <= est.mean <= 1 and est.std_error > 0

    def test_seed_determinism(self):
        p = P0.with_(elastic_prob=0.5)
        cfg = replace(FAST, n_atoms=BLOCK_SIZE + 300)
        a = estimate_rho33(p, 100.0, cfg)
        b = estimate_rho33(p, 100.0, cfg, workers=2)
        c = estimate_rho33(p, 100.0, cfg)
        assert a.mean == b.mean == c.mean and a.std_error == b.std_error
        d = estimate_rho33(p, 100.0, replace(cfg, seed=12))
        assert d.mean != a.mean

    def test_block_streams_independent(self):
        x = _make_rng(5, 0).random(4)
        y = _make_rng(5, 1).random(4)
        assert not np.array_equal(x, y)
        assert np.array_equal(x, _make_rng(5, 0).random(4))

    def test_histograms_match_laws(self):
        p = P0.with_(elastic_prob=0.5)
        est = estimate_rho33(p, 0.0, replace(FAST, n_atoms=3000))
        s = p.beam_radius / p.v_thermal
        tau = est.histograms["tau"]
        assert np.all(np.diff(tau(np.linspace(0, 1e-4, 100))) >= 0)
        ks = stats.kstest(tau.samples / s, lambda x: 1 - f_t_approx(np.maximum(x, 0)) * PI32 / 2)
        assert ks.pvalue > 1e-3
        sd = ell_perp(p) / p.v_thermal
        ks = stats.kstest(est.histograms["tau_prime"].samples / sd, F_prime_approx)
        assert ks.pvalue > 1e-3
        N = est.histograms["N"].samples
        assert N.mean() == pytest.approx(1.0, abs=5 * N.std() / np.sqrt(len(N)))

    def test_agrees_with_analytic(self):
        p = P0.with_(elastic_prob=0.5)
        est = estimate_rho33(p, 0.0, TrajectoryConfig(n_atoms=4000, seed=3))
        assert abs(est.mean - rho33_average(p, 0.0)) < 4 * est.std_error


class TestExactGeometry:
    def test_specular_angle_invariant(self):
        p = P0.with_(elastic_prob=1.0)
        cfg = replace(FAST, mode="exact-geometry").resolved(p)
        out = _exact_block(p, None, cfg, 500, np.random.default_rng(2))
        assert np.array_equal(out["phi0"], out["phi"])

    def test_beam_fraction(self):
        f, se = beam_time_fraction(P0, TrajectoryConfig(n_atoms=5000, seed=1))
        assert abs(f - 0.09) < 3 * se

    def test_tau_dark(self):
        cfg = TrajectoryConfig(n_atoms=3000, mode="exact-geometry", seed=2)
        cdf, mean, low = empirical_tau_dark(P0, cfg)
        assert mean == pytest.approx(1.78e-4, rel=0.05)
        assert low >= 2 * (P0.cell_radius - P0.beam_radius) / (3 * P0.v_thermal)
        assert np.all(np.diff(cdf(np.linspace(0, 1e-3, 200))) >= 0)

    def test_tau_dark_needs_exact_mode(self):
        with pytest.raises(ValueError):
            empirical_tau_dark(P0, TrajectoryConfig())
        with pytest.raises(ValueError):
            empirical_tau_dark(P0.with_(elastic_prob=1.0), TrajectoryConfig(mode="exact-geometry"))
