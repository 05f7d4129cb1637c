"""Random families, averaged diagnostics and the convergence experiment."""
import math
from dataclasses import dataclass

import numpy as np
import pytest
from scipy.stats import gaussian_kde, truncnorm

from sclab.classical import push_forward
from sclab.ensemble import (ExperimentSettings, GridRule, RandomFamily, fit_tail_constant, husimi_at,
                            ladder_ratio, limit_measure, no_concentration_diagnostics,
                            operator_inequality_diagnostics, run_convergence_experiment, sample_family,
                            tightness_diagnostics, uniformly_bounded)
from sclab.errors import OutOfBox
from sclab.grid import SpatialGrid, coherent_state, wave_packet
from sclab.phase_space import husimi
from sclab.potential import Potential
from sclab.propagator import PropagatorConfig, propagate

UNIT_BOX = dict(n=1, center=(0.0, 0.0), scale=(1.0, 1.0))
LADDER = (0.4, 0.2, 0.1, 0.05)


def probe_lattice(count=21, reach=2.0):
    axis = np.linspace(-reach, reach, count)[:, None]
    return axis, axis


def ladder_reports(law, n_w=256):
    family = RandomFamily(**UNIT_BOX, law=law, n_w=n_w, seed=3)
    reports = []
    for eps in LADDER:
        grid = SpatialGrid.uniform(-6.0, 6.0, 256 if eps > 0.06 else 512)
        members = sample_family(family, grid, eps)
        reports.append(operator_inequality_diagnostics(members, eps, probes=probe_lattice(),
                                                       far_probe=(np.array([4.5]), np.array([4.5]))))
    return reports


@dataclass(frozen=True)
class ReversedFamily(RandomFamily):
    """Same labels in reverse order."""

    def labels(self):
        return super().labels()[::-1]


@pytest.fixture(scope="module")
def harmonic_run():
    family = RandomFamily(**UNIT_BOX, n_w=8, seed=1)
    settings = ExperimentSettings(samples=5, probe_count=11, tail_radii=(2.0, 3.0, 4.0))
    return run_convergence_experiment(family, Potential.from_catalog("harmonic", 1), math.pi, (0.4, 0.2, 0.1),
                                      settings)


@pytest.fixture(scope="module")
def uniform():
    return ladder_reports("uniform_box")


@pytest.fixture(scope="module")
def dirac():
    return ladder_reports("dirac")


class TestFamily:
    def test_sampler_deterministic(self):
        a = RandomFamily(**UNIT_BOX, seed=9).labels()
        np.testing.assert_array_equal(a, RandomFamily(**UNIT_BOX, seed=9).labels())
        assert not np.array_equal(a, RandomFamily(**UNIT_BOX, seed=10).labels())

    def test_uniform_box_support(self):
        fam = RandomFamily(1, (0.5, -1.0), (0.25, 2.0), n_w=500)
        w = fam.labels()
        assert np.all(np.abs(w - fam.center) <= fam.support_reach())
        assert fam.density_sup() == pytest.approx(1 / (0.5 * 4.0))

    def test_truncated_gaussian(self):
        fam = RandomFamily(1, (0.0, 0.0), (0.5, 1.0), law="truncated_gaussian", truncation=2.0, n_w=2000)
        w = fam.labels()
        assert np.all(np.abs(w) <= 2.0 * np.array([0.5, 1.0]))
        peak = truncnorm.pdf(0, -2, 2, scale=0.5) * truncnorm.pdf(0, -2, 2, scale=1.0)
        assert fam.density_sup() == pytest.approx(peak, rel=1e-12)

    def test_dirac_law(self):
        fam = RandomFamily(**UNIT_BOX, law="dirac", n_w=5)
        assert np.all(fam.labels() == 0) and fam.density_sup() == math.inf

    @pytest.mark.parametrize("bad", [dict(law="cauchy"), dict(alpha=1.5), dict(n_w=0), dict(scale=(1.0, 0.0)),
                                     dict(center=(0.0,))])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            RandomFamily(**{**UNIT_BOX, **bad})


class TestLimitMeasure:
    def test_half_alpha_is_single_particle(self, line):
        fam = RandomFamily(**UNIT_BOX, n_w=4)
        for m in sample_family(fam, line, 0.1):
            assert m.limit.size == 1 and m.limit.weights[0] == 1.0
            np.testing.assert_array_equal(m.limit.z[0], m.w)
            assert m.psi.info["w"] == ((m.w[0],), (m.w[1],))

    def test_momentum_cloud_matches_fourier_density(self):
        fam = RandomFamily(1, (0.0, 0.3), (1.0, 1.0), alpha=1.0)
        cloud = limit_measure(fam, np.array([0.0, 0.3]))
        assert cloud.size == 256 and np.all(cloud.x == 0.0)
        kde = gaussian_kde(cloud.p[:, 0])
        # direct quadrature of the envelope transform
        u = np.linspace(-2.5, 2.5, 4001)
        f = fam.envelope(u[:, None])
        f /= np.sqrt(np.trapezoid(f**2, u))
        for k in (0.0, 0.3, 0.6, 1.0):
            dens = abs(np.trapezoid(f * np.exp(-1j * k * u), u)) ** 2 / (2 * np.pi)
            assert kde(0.3 + k)[0] == pytest.approx(dens, rel=0.1)

    def test_position_cloud(self):
        fam = RandomFamily(1, (0.0, 0.0), (1.0, 1.0), alpha=0.0)
        cloud = limit_measure(fam, np.array([1.0, -0.5]))
        assert np.all(cloud.p == -0.5)
        assert np.mean(cloud.x) == pytest.approx(1.0, abs=1e-3)
        assert np.all(np.abs(cloud.x - 1.0) <= fam.envelope_radius)

    def test_stratified_cloud_deterministic(self):
        fam = RandomFamily(1, (0.0, 0.0), (1.0, 1.0), alpha=1.0)
        a, b = limit_measure(fam, np.zeros(2)), limit_measure(fam, np.zeros(2))
        np.testing.assert_array_equal(a.p, b.p)

    def test_packet_leaving_box(self):
        fam = RandomFamily(1, (7.5, 0.0), (0.1, 0.1), n_w=2)
        with pytest.raises(OutOfBox):
            sample_family(fam, SpatialGrid.uniform(-8.0, 8.0, 256), 0.4)

    def test_free_limit_path_exact(self):
        fam = RandomFamily(**UNIT_BOX, n_w=6)
        for w in fam.labels():
            path = push_forward(limit_measure(fam, w), Potential.from_catalog("zero", 1), 2.0,
                                samples=[0.0, 1.0, 2.0])
            for t, ens in zip(path.times, path.ensembles):
                np.testing.assert_allclose(ens.x[0], w[:1] + t * w[1:], atol=1e-13)
                np.testing.assert_array_equal(ens.p[0], w[1:])


class TestHusimiAt:
    def test_matches_lattice_husimi(self, line):
        psi = coherent_state(line, 0.1, [0.3], [-0.4])
        H = husimi(psi)
        ix, ip = [120, 128, 140], [100, 128, 131]
        ys = H.x_axes[0].points[ix][:, None]
        ps = H.p_axes[0].points[ip][:, None]
        np.testing.assert_allclose(husimi_at(psi, ys, ps), H.values[np.ix_(ix, ip)], atol=1e-10)

    def test_nonnegative(self, line, rng):
        psi = wave_packet(line, 0.05, 0.5, [0.2], [0.7])
        vals = husimi_at(psi, rng.uniform(-3, 3, (15, 1)), rng.uniform(-3, 3, (15, 1)))
        assert vals.min() >= 0


class TestOperatorInequality:
    def test_uniform_family_bounded(self, uniform):
        assert 0.5 <= ladder_ratio([r.husimi_sup for r in uniform]) <= 2
        assert uniformly_bounded(uniform)
        for r in uniform:
            assert r.n_w == 256 and r.implied_C >= r.husimi_sup

    def test_dirac_family_flagged(self, dirac):
        sups = [r.husimi_sup for r in dirac]
        # no averaging: sup of a single packet grows like 1/eps
        for a, b in zip(sups, sups[1:]):
            assert b / a == pytest.approx(2.0, rel=1e-6)
        assert not uniformly_bounded(dirac)

    def test_far_probe(self, uniform, dirac):
        assert max(r.probe_far_value for r in uniform + dirac) <= 1e-8

    def test_requires_probes(self, line):
        members = sample_family(RandomFamily(**UNIT_BOX, n_w=2), line, 0.1)
        with pytest.raises(ValueError):
            operator_inequality_diagnostics(members, 0.1)

    def test_ladder_ratio(self):
        assert ladder_ratio([2.0, 1.0, 4.0]) == 4.0


class TestTightness:
    def test_table_shapes(self, rng):
        tails = rng.random((3, 4, 2)) * np.array([1.0, 0.1])
        ints = np.cumsum(np.ones((3, 4, 5)), axis=1)
        rep = tightness_diagnostics(tails, ints, np.linspace(0, 1, 4), (1.0, 2.0), bound=1.0)
        assert rep.tail_sup == tuple(tails.max(axis=(0, 1)))
        np.testing.assert_allclose(rep.time_variation, 3.0)
        assert rep.space_ok and rep.time_ok

    def test_free_packet_tail_constant(self):
        radii = (1.0, 1.5, 2.0, 3.0, 4.0)
        cs = []
        for eps in (0.2, 0.1, 0.05):
            psi = wave_packet(SpatialGrid.uniform(-10.0, 10.0, 512), eps, 0.5, [0.0], [1.0])
            tr = propagate(psi, Potential.from_catalog("zero", 1), 2.0, PropagatorConfig(tail_radii=radii),
                           samples=[0.0, 2.0])
            first, last = tr.diagnostics[0], tr.diagnostics[-1]
            cs.append(fit_tail_constant(first.tails, last.tails, radii, 2.0, first.energy))
        assert max(cs) < 1 and ladder_ratio(cs) <= 2

    def test_tail_constant_zero_without_growth(self):
        assert fit_tail_constant([0.1, 0.01], [0.05, 0.01], [1.0, 2.0], 1.0, 0.5) == 0.0

    def test_harmonic_confinement(self, harmonic_run):
        # labels stay within sqrt(2) of the origin; R = 4 clears orbit plus packet
        for r in harmonic_run.results:
            if r.eps <= 0.2:
                assert r.tightness.tail_sup[-1] <= 1e-6
            assert r.tightness.space_ok

    def test_time_variation_stable(self, harmonic_run):
        tv = [max(r.tightness.time_variation) for r in harmonic_run.results]
        assert np.all(np.isfinite(tv)) and ladder_ratio(tv) <= 2


class TestNoConcentration:
    def test_persists_on_harmonic_run(self, harmonic_run):
        for r in harmonic_run.results:
            nc = r.no_concentration
            assert nc.times == (0.0, math.pi / 2, math.pi)
            assert nc.persists and max(nc.ratio_to_initial) <= 2

    def test_growth_flagged(self):
        grid = np.ones((3, 3))
        rep = no_concentration_diagnostics({0.0: grid, 1.0: 3 * grid}, 0.1)
        assert rep.ratio_to_initial == (1.0, 3.0) and not rep.persists
        assert no_concentration_diagnostics({0.0: grid, 1.0: 3 * grid}, 0.1, mc_rel_error=0.6).persists


class TestGridRule:
    def test_power_of_two_and_reach(self):
        rule = GridRule()
        for eps in LADDER:
            g = rule.build(eps, 0.5, 2.5, np.array([2.0]), np.array([1.5]))
            count = g.axes[0].count
            assert count & (count - 1) == 0 and count >= rule.min_count
            half = g.axes[0].hi
            assert (1 - 2 * rule.layer) * half >= 2.0 + 2.5 * eps**0.5
            assert np.pi * eps / g.axes[0].spacing * rule.band >= 1.5 + 6.0 * eps**0.5

    def test_offset_diagonal(self):
        g = GridRule(offset_diagonal=True).build(0.2, 0.5, 2.5, np.array([1.0, 1.0]), np.array([1.0, 1.0]))
        a, b = g.axes
        assert b.lo - a.lo == pytest.approx(a.spacing / 4)
        x0 = a.points[:, None]
        x1 = b.points[None, :]
        assert np.min(np.abs(x0 - x1)) >= a.spacing / 4 - 1e-12

    def test_cap(self):
        with pytest.raises(OutOfBox):
            GridRule(max_count=64).build(0.01, 0.5, 2.5, np.array([5.0]), np.array([5.0]))


class TestExperiment:
    def test_harmonic_ladder(self, harmonic_run):
        D = harmonic_run.D
        assert harmonic_run.strictly_decreasing()
        assert np.all((D >= 0) & (D <= 2))
        assert np.all(harmonic_run.stderr <= 0.1 * D)
        assert np.all(harmonic_run.excluded_fraction == 0)

    def test_initial_term_decreases(self, harmonic_run):
        D0 = [r.D0 for r in harmonic_run.results]
        assert all(a > b for a, b in zip(D0, D0[1:]))

    def test_permutation_invariant(self):
        pot = Potential.from_catalog("harmonic", 1)
        settings = ExperimentSettings(samples=3)
        kw = dict(**UNIT_BOX, n_w=6, seed=4)
        a = run_convergence_experiment(RandomFamily(**kw), pot, 1.0, (0.4, 0.2), settings)
        b = run_convergence_experiment(ReversedFamily(**kw), pot, 1.0, (0.4, 0.2), settings)
        np.testing.assert_array_equal(a.D, b.D)
        np.testing.assert_array_equal(a.stderr, b.stderr)

    def test_threads_do_not_change_result(self):
        pot = Potential.from_catalog("zero", 1)
        fam = RandomFamily(**UNIT_BOX, n_w=4, seed=2)
        one = run_convergence_experiment(fam, pot, 1.0, (0.4,), ExperimentSettings(samples=3))
        two = run_convergence_experiment(fam, pot, 1.0, (0.4,), ExperimentSettings(samples=3, threads=2))
        np.testing.assert_array_equal(one.D, two.D)

    def test_exclusions_counted(self):
        fam = RandomFamily(**UNIT_BOX, n_w=3)
        rep = run_convergence_experiment(fam, Potential.from_catalog("zero", 1), 1.0, (0.4,),
                                         ExperimentSettings(samples=3, tail_tol=1e-300))
        res = rep.results[0]
        assert res.excluded_fraction == 1.0 and math.isnan(res.D)
        assert all(o["reason"].startswith("TailOverflow") for o in res.per_w)
