"""Dictionary metric, expectation measures and the regularity report."""
import json

import numpy as np
import pytest

from sclab.classical import ParticleEnsemble
from sclab.errors import NotNormalized
from sclab.grid import coherent_state
from sclab.measures import TestDictionary, d_P, expectation_measure, regularity_check
from sclab.phase_space import husimi


@pytest.fixture(scope="module")
def dictionary():
    return TestDictionary((-3.0, -3.0), (3.0, 3.0), seed=0)


def random_ensemble(rng, m=None, n=1):
    m = m or int(rng.integers(1, 12))
    w = rng.random(m)
    return ParticleEnsemble(rng.normal(size=(m, n)), rng.normal(size=(m, n)), w / w.sum())


class TestDictionaryConstruction:
    def test_deterministic(self):
        a, b = TestDictionary((-1, -1), (1, 1), seed=3), TestDictionary((-1, -1), (1, 1), seed=3)
        np.testing.assert_array_equal(a.centers, b.centers)
        np.testing.assert_array_equal(a.freqs, b.freqs)
        c = TestDictionary((-1, -1), (1, 1), seed=4)
        assert not np.array_equal(a.centers, c.centers)

    def test_layout(self, dictionary):
        assert dictionary.K == 64 and dictionary.n == 1
        assert np.all(dictionary.freqs[0] == 0) and dictionary.phases[0] == 0
        # frequencies up to 4 per axis over 1.5 times the box length
        assert np.max(np.abs(dictionary.freqs)) <= 2 * np.pi * 4 / (1.5 * 6.0) + 1e-12
        assert dictionary.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_members_bounded(self, dictionary, rng):
        z = rng.uniform(-10, 10, (500, 2))
        assert np.max(np.abs(dictionary.evaluate(z[:, :1], z[:, 1:]))) <= 1.0

    def test_header_is_json(self, dictionary):
        h = json.loads(json.dumps(dictionary.header()))
        assert h["seed"] == 0 and h["K"] == 64 and len(h["freqs"]) == 64

    def test_rejects_bad_box(self):
        with pytest.raises(ValueError):
            TestDictionary((0.0, 0.0), (1.0, 0.0))
        with pytest.raises(ValueError):
            TestDictionary((0.0,) * 3, (1.0,) * 3)


class TestMetric:
    def test_identity(self, dictionary, rng):
        mu = random_ensemble(rng)
        assert d_P(mu, mu, dictionary) == 0.0

    def test_range(self, dictionary, rng):
        for _ in range(20):
            assert 0 <= d_P(random_ensemble(rng), random_ensemble(rng), dictionary) <= 2

    def test_axioms_on_random_triples(self, dictionary):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a, b, c = (random_ensemble(rng) for _ in range(3))
            ab, ba = d_P(a, b, dictionary), d_P(b, a, dictionary)
            assert ab == ba
            assert d_P(a, c, dictionary) <= ab + d_P(b, c, dictionary)

    def test_dirac_lipschitz(self, dictionary):
        z = np.array([0.006, -0.008])
        dist = d_P(ParticleEnsemble.dirac([0.0], [0.0]), ParticleEnsemble.dirac(z[:1], z[1:]), dictionary)
        assert 0 < dist <= dictionary.lipschitz_sum() * np.linalg.norm(z)

    def test_monotone_under_shrinking_perturbation(self, dictionary, rng):
        base = random_ensemble(rng, m=30)
        shift = rng.normal(size=base.x.shape)
        d = [d_P(base, base.moved(base.x + s * shift, base.p), dictionary) for s in (0.1, 0.03, 0.01, 0.003)]
        assert all(a > b for a, b in zip(d, d[1:]))
        assert d[-1] < 1e-2

    def test_precomputed_integrals(self, dictionary, rng):
        mu, nu = random_ensemble(rng), random_ensemble(rng)
        direct = d_P(mu, nu, dictionary)
        assert d_P(dictionary.particle_integrals(mu), nu, dictionary) == direct
        with pytest.raises(TypeError):
            d_P(np.zeros(3), nu, dictionary)

    def test_field_against_particles(self, dictionary, line):
        # Husimi of a coherent state versus particles drawn from its density
        eps = 0.1
        H = husimi(coherent_state(line, eps, [0.3], [-0.4]))
        rng = np.random.default_rng(0)
        sd = np.sqrt(eps / 2 + eps / 2)

        def cloud(m):
            return ParticleEnsemble.uniform(0.3 + sd * rng.normal(size=(m, 1)), -0.4 + sd * rng.normal(size=(m, 1)))

        means = [np.mean([d_P(H, cloud(m), dictionary) for _ in range(20)]) for m in (100, 400, 1600)]
        # O(m^-1/2): quadrupling m halves the mean distance
        assert means[0] / means[1] == pytest.approx(2.0, rel=0.3)
        assert means[1] / means[2] == pytest.approx(2.0, rel=0.3)

    def test_not_normalized(self, dictionary, line):
        H = husimi(coherent_state(line, 0.1, [0.3], [-0.4]))
        half = type(H)(H.x_axes, H.p_axes, 0.5 * H.values, "husimi", H.eps)
        with pytest.raises(NotNormalized):
            d_P(half, ParticleEnsemble.dirac([0.0], [0.0]), dictionary)


class TestExpectation:
    def test_two_diracs(self):
        e = expectation_measure([ParticleEnsemble.dirac([1.0], [0.0]), ParticleEnsemble.dirac([-1.0], [0.5])])
        np.testing.assert_array_equal(e.weights, [0.5, 0.5])
        np.testing.assert_array_equal(e.x[:, 0], [1.0, -1.0])

    def test_empirical_law_of_diracs(self, rng):
        xs = rng.normal(size=(10, 1))
        ps = rng.normal(size=(10, 1))
        e = expectation_measure([ParticleEnsemble.dirac(x, p) for x, p in zip(xs, ps)])
        empirical = ParticleEnsemble.uniform(xs, ps)
        np.testing.assert_array_equal(e.x, empirical.x)
        np.testing.assert_allclose(e.weights, empirical.weights, rtol=1e-15)

    def test_idempotent(self, rng):
        mu = random_ensemble(rng)
        e = expectation_measure([mu])
        np.testing.assert_array_equal(e.x, mu.x)
        np.testing.assert_allclose(e.weights, mu.weights, rtol=1e-15)

    def test_rejects_bad_probabilities(self, rng):
        with pytest.raises(ValueError):
            expectation_measure([random_ensemble(rng), random_ensemble(rng)], [0.7, 0.7])


class TestRegularity:
    @pytest.fixture
    def lattice(self):
        h = 1 / 40
        g = (np.arange(40) + 0.5) * h
        X, P = np.meshgrid(g, g, indexing="ij")
        return h, ParticleEnsemble.uniform(X.reshape(-1, 1), P.reshape(-1, 1))

    def test_uniform_density(self, lattice):
        h, ens = lattice
        probes = np.array([[0.5, 0.5], [0.3, 0.6], [0.7, 0.4]])
        rep = regularity_check(ens, C=1.0, h_kde=4 * h, probes=probes)
        assert rep.max_density == pytest.approx(1.0, rel=0.1)
        assert rep.regular and rep.dimension == 2

    def test_scaling_box(self, lattice):
        h, ens = lattice
        wide = ens.moved(2 * ens.x, 2 * ens.p)
        a = regularity_check(ens, 1.0, 4 * h, probes=[[0.5, 0.5]]).max_density
        b = regularity_check(wide, 1.0, 8 * h, probes=[[1.0, 1.0]]).max_density
        assert b == pytest.approx(a / 4, rel=1e-12)

    def test_dirac_flagged(self):
        dirac = ParticleEnsemble.dirac([0.0], [0.0])
        dens = [regularity_check(dirac, 1.0, hk).max_density for hk in (0.5, 0.1, 0.02)]
        assert dens[0] < dens[1] < dens[2]
        assert not regularity_check(dirac, 1.0, 0.02).regular

    def test_position_coordinates(self, lattice):
        h, ens = lattice
        rep = regularity_check(ens, 1.0, 4 * h, coords="x", probes=[[0.5]])
        assert rep.dimension == 1 and rep.max_density == pytest.approx(1.0, rel=0.1)
