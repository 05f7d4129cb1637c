"""Classical flow, push-forward measure paths and their diagnostics."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sclab.classical import (
    FlowConfig,
    MeasurePath,
    ParticleEnsemble,
    dist_integrability,
    flow_map,
    jacobian_fd,
    liouville_residual,
    push_forward,
    symplectic_defect,
    weighted_sum,
)
from sclab.errors import SupportViolation
from sclab.measures import TestDictionary, d_P
from sclab.phase_space import Bump, TestFunction, TimeBump
from sclab.potential import Potential

FREE = Potential.from_catalog("zero")
HARMONIC = Potential.from_catalog("harmonic")
COSINE = Potential.from_catalog("cosine")
PAIR = Potential.from_catalog("zero", 2, charges=(1.0, 1.0))
# same charges with the singular force switched off: particles at rest stay put
RESTING = Potential.from_catalog("zero", 2, charges=(1.0, 1.0), singular_enabled=False)


def rotation(x, p, t):
    return x * np.cos(t) + p * np.sin(t), -x * np.sin(t) + p * np.cos(t)


@pytest.fixture
def circle():
    theta = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    return ParticleEnsemble.uniform(np.cos(theta)[:, None], np.sin(theta)[:, None])


class TestConfig:
    @pytest.mark.parametrize("kw", [{"h": 0.0}, {"r_guard": -1.0}, {"beta": 1.0}, {"energy_cutoff": 0.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            FlowConfig(**kw)

    def test_samples_start_at_zero(self):
        with pytest.raises(ValueError):
            flow_map([[0.0]], [[1.0]], FREE, 1.0, samples=[0.5, 1.0])


class TestFlowMap:
    @given(x=st.floats(-3, 3), p=st.floats(-3, 3), t=st.floats(-2, 2))
    def test_free_motion(self, x, p, t):
        res = flow_map([[x]], [[p]], FREE, t, FlowConfig(h=0.05))
        assert res.x[-1, 0, 0] == pytest.approx(x + t * p, abs=1e-12)
        assert res.p[-1, 0, 0] == p

    def test_harmonic_closed_form(self, rng):
        # Verlet phase error is h^2 t / 24; h = 1e-4 keeps it below 1e-8 at t = pi/3
        x, p = rng.uniform(-1, 1, (2, 10, 1))
        t = np.pi / 3
        res = flow_map(x, p, HARMONIC, t, FlowConfig(h=1e-4))
        ex, ep = rotation(x, p, t)
        assert np.max(np.abs(res.x[-1] - ex)) <= 1e-8
        assert np.max(np.abs(res.p[-1] - ep)) <= 1e-8

    def test_harmonic_error_is_second_order(self):
        t = np.pi / 3
        ex, _ = rotation(0.7, -0.2, t)
        err = [abs(flow_map([[0.7]], [[-0.2]], HARMONIC, t, FlowConfig(h=h)).x[-1, 0, 0] - ex)
               for h in (2e-3, 1e-3)]
        assert err[0] / err[1] == pytest.approx(4.0, rel=0.05)

    def test_cosine_energy_drift(self, rng):
        x, p = rng.uniform(-2, 2, (2, 8, 1))
        res = flow_map(x, p, COSINE, 10.0, FlowConfig(h=1e-3), samples=101)
        e = COSINE.energy(res.x, res.p)
        drift = np.max(np.abs(e - e[0]))
        assert drift <= 1e-6
        # self-convergence: halving h divides the drift by about four
        half = flow_map(x, p, COSINE, 10.0, FlowConfig(h=5e-4), samples=101)
        e2 = COSINE.energy(half.x, half.p)
        assert drift / np.max(np.abs(e2 - e2[0])) == pytest.approx(4.0, rel=0.1)

    def test_backward_flow_inverts(self, rng):
        x, p = rng.uniform(-1, 1, (2, 5, 1))
        fwd = flow_map(x, p, COSINE, 1.0)
        back = flow_map(fwd.x[-1], fwd.p[-1], COSINE, -1.0)
        np.testing.assert_allclose(back.x[-1], x, atol=1e-12)
        np.testing.assert_allclose(back.p[-1], p, atol=1e-12)

    def test_flow_is_symplectic(self):
        # Verlet is exactly symplectic: det J = 1 up to finite-difference error
        for pot, x, p in [(COSINE, [0.3], [0.8]), (PAIR, [-1.0, 1.0], [0.5, -0.5])]:
            J = jacobian_fd(x, p, pot, 1.0, FlowConfig(h=1e-3), delta=1e-5)
            assert abs(np.linalg.det(J) - 1) <= 1e-6
            assert symplectic_defect(J) <= 1e-6

    def test_coulomb_repulsion(self):
        # head-on approach of two equal charges turns back before the diagonal
        res = flow_map([[-1.0, 1.0]], [[1.0, -1.0]], PAIR, 2.0, samples=41)
        assert not res.absorbed[0]
        assert PAIR.dist_to_S(res.x[:, 0]).min() > 0.4
        e = PAIR.energy(res.x[:, 0], res.p[:, 0])
        assert np.max(np.abs(e - e[0])) <= 1e-5

    def test_fast_collision_needs_step_control(self):
        # closest approach 0.014 from S at energy 100: plain steps lose energy, both rules recover it
        start = ([[-1.0, 1.0]], [[10.0, -10.0]])

        def run(cfg):
            res = flow_map(*start, PAIR, 0.2, cfg, samples=5)
            e = PAIR.energy(res.x[:, 0], res.p[:, 0])
            return abs(e[-1] - e[0]), res.substeps

        plain, n_plain = run(FlowConfig(h=1e-3))
        capped, n_capped = run(FlowConfig(h=1e-3, energy_cutoff=10.0))
        near, n_near = run(FlowConfig(h=1e-3, r_guard=5e-3))
        assert plain > 1.0
        assert capped <= 1e-4 and n_capped > 3 * n_plain
        assert near < plain and n_near > n_plain
        # the distance rule keeps Verlet's second order
        finer, _ = run(FlowConfig(h=5e-4, r_guard=5e-3))
        assert near / finer >= 3.5

    def test_absorption_inside_guard(self):
        res = flow_map([[0.5, 0.5 + 1e-4], [-1.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]], PAIR, 0.1)
        assert res.absorbed.tolist() == [True, False]
        assert res.absorbed_at[0] == 0.0
        np.testing.assert_array_equal(res.x[-1, 0], [0.5, 0.5 + 1e-4])


class TestPushForward:
    def test_dirac(self):
        mu = ParticleEnsemble.dirac([0.4], [-0.3])
        path = push_forward(mu, COSINE, 1.5, samples=4)
        direct = flow_map([[0.4]], [[-0.3]], COSINE, 1.5, samples=4)
        for i, e in enumerate(path.ensembles):
            assert e.size == 1 and e.weights[0] == 1.0
            np.testing.assert_array_equal(e.x, direct.x[i])

    def test_convex_combination(self, rng):
        a = ParticleEnsemble.uniform(rng.normal(size=(5, 1)), rng.normal(size=(5, 1)))
        b = ParticleEnsemble.uniform(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)))
        mix = ParticleEnsemble.combine([a, b], [0.3, 0.7])
        pm = push_forward(mix, COSINE, 1.0, samples=3).ensembles[-1]
        pa = push_forward(a, COSINE, 1.0, samples=3).ensembles[-1]
        pb = push_forward(b, COSINE, 1.0, samples=3).ensembles[-1]
        union = ParticleEnsemble.combine([pa, pb], [0.3, 0.7])
        np.testing.assert_allclose(pm.x, union.x, atol=1e-15)
        np.testing.assert_allclose(pm.weights, union.weights, rtol=1e-15)

    def test_circle_rotates_rigidly(self, circle):
        D = TestDictionary((-2.0, -2.0), (2.0, 2.0), seed=0)
        t = np.pi / 3
        path = push_forward(circle, HARMONIC, t, samples=2)
        ex, ep = rotation(circle.x, circle.p, t)
        exact = ParticleEnsemble(ex, ep, circle.weights)
        assert d_P(path.ensembles[-1], exact, D) <= 1e-6

    def test_weights_preserved(self, rng):
        w = rng.random(7)
        mu = ParticleEnsemble(rng.normal(size=(7, 1)), rng.normal(size=(7, 1)), w / w.sum())
        path = push_forward(mu, COSINE, 1.0, samples=5)
        for e in path.ensembles:
            np.testing.assert_array_equal(e.weights, mu.weights)
        np.testing.assert_array_equal(path.absorbed_mass(), 0.0)

    def test_repulsive_absorbed_mass_is_small(self, rng):
        x = np.array([-1.0, 1.0]) + 0.2 * rng.uniform(-1, 1, (200, 2))
        p = np.array([1.0, -1.0]) + 0.2 * rng.uniform(-1, 1, (200, 2))
        path = push_forward(ParticleEnsemble.uniform(x, p), PAIR, 1.5, samples=4)
        assert path.absorbed_mass()[-1] <= 0.01


class TestLiouville:
    @pytest.fixture
    def phi(self):
        return TestFunction.separable(Bump([0.5], 1.5), Bump([0.0], 1.5))

    @pytest.mark.parametrize("pot", [FREE, HARMONIC], ids=["free", "harmonic"])
    def test_exact_paths(self, phi, pot, rng):
        x, p = rng.uniform(-1, 1, (2, 30, 1))
        times = np.linspace(0, 2.0, 801)
        if pot is FREE:
            xs, ps = x[None] + times[:, None, None] * p[None], np.broadcast_to(p, (len(times),) + p.shape)
        else:
            xs, ps = rotation(x[None], p[None], times[:, None, None])
        w = np.full(30, 1 / 30)
        path = MeasurePath(times, [ParticleEnsemble(xs[i], ps[i], w) for i in range(len(times))])
        assert liouville_residual(path, pot, phi, TimeBump(0.0, 2.0)) <= 1e-6

    def test_second_order_in_step(self, phi):
        # samples at the step spacing: Simpson's error is h^4, the flow's h^2
        x = np.linspace(-1, 1, 9)[:, None]
        mu = ParticleEnsemble.uniform(x, 0.5 - x)
        res = [liouville_residual(push_forward(mu, COSINE, 2.0, FlowConfig(h=h), samples=round(2 / h) + 1),
                                  COSINE, phi, TimeBump(0.0, 2.0)) for h in (0.1, 0.05, 0.025, 0.0125)]
        assert all(a / b >= 3.6 for a, b in zip(res, res[1:]))

    def test_zero_test_function(self, phi, circle):
        path = push_forward(circle, COSINE, 1.0, samples=11)
        assert liouville_residual(path, COSINE, phi.scaled(0.0), TimeBump(0.0, 1.0)) == 0.0

    def test_linear_in_ensemble(self, phi, rng):
        a = ParticleEnsemble.uniform(rng.normal(size=(6, 1)), rng.normal(size=(6, 1)))
        b = ParticleEnsemble.uniform(rng.normal(size=(4, 1)), rng.normal(size=(4, 1)))
        w = TimeBump(0.0, 1.0)
        cfg = FlowConfig(h=0.02)

        def residual(mu):
            return liouville_residual(push_forward(mu, COSINE, 1.0, cfg, samples=51), COSINE, phi, w, signed=True)

        mixed = residual(ParticleEnsemble.combine([a, b], [0.25, 0.75]))
        assert mixed == pytest.approx(0.25 * residual(a) + 0.75 * residual(b), abs=1e-12)

    def test_support_violation(self):
        path = push_forward(ParticleEnsemble.dirac([-1.0, 1.0], [0.0, 0.0]), PAIR, 0.5, samples=3)
        touching = TestFunction.separable(Bump([0.0, 0.0], 0.5), Bump([0.0, 0.0], 1.0))
        with pytest.raises(SupportViolation):
            liouville_residual(path, PAIR, touching, TimeBump(0.0, 0.5))


class TestIntegrability:
    def test_static_ensemble(self, rng):
        x = rng.uniform(-2, 2, (10, 2))
        w = rng.random(10)
        w /= w.sum()
        mu = ParticleEnsemble(x, np.zeros_like(x), w)
        T = 1.5
        path = push_forward(mu, RESTING, T, samples=5)
        rep = dist_integrability(path, PAIR, R=10.0, beta=2.0)
        expected = T * weighted_sum(w, PAIR.dist_to_S(x) ** -2.0)
        assert rep.raw == pytest.approx(expected, rel=1e-8)

    def test_delta_ladder_nonincreasing(self, rng):
        x = np.array([-1.0, 1.0]) + 0.3 * rng.normal(size=(50, 2))
        path = push_forward(ParticleEnsemble.uniform(x, np.zeros_like(x)), PAIR, 0.5, samples=6)
        vals = dist_integrability(path, PAIR, R=5.0, deltas=(0.0, 1e-3, 1e-2, 1e-1)).values
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_repulsion_stable_under_refinement(self):
        x = np.array([[-0.6, 0.6], [-0.5, 0.7], [-0.7, 0.4]])
        mu = ParticleEnsemble.uniform(x, -0.8 * x)
        vals = [dist_integrability(push_forward(mu, PAIR, 1.5, FlowConfig(h=h), samples=61), PAIR, R=5.0).raw
                for h in (2e-3, 1e-3)]
        assert np.isfinite(vals).all()
        assert vals[0] == pytest.approx(vals[1], rel=1e-3)

    def test_needs_singular_part(self, circle):
        with pytest.raises(ValueError):
            dist_integrability(push_forward(circle, FREE, 0.1, samples=2), FREE, R=1.0)

