"""Strang split-step propagator, guards and diagnostics."""
import numpy as np
import pytest
from scipy.integrate import quad

from sclab.errors import NyquistViolation, TailOverflow
from sclab.grid import SpatialGrid, Wavefunction, coherent_state, l2_norm, random_superposition
from sclab.potential import Potential
from sclab.propagator import (
    PropagatorConfig,
    QuantumDiagnostics,
    StrangStepper,
    default_dt,
    diagnostics,
    propagate,
    step,
)

FREE = Potential.from_catalog("zero")
HARMONIC = Potential.from_catalog("harmonic")


def free_gaussian(x, t, eps, s2, p0=0.0):
    """Exact free evolution of ``(pi s2)^-1/4 exp(-x^2/(2 s2) + i p0 x/eps)``."""
    a = 1 + 1j * eps * t / s2
    xc = x - p0 * t
    phase = np.exp(1j * (p0 * xc + 0.5 * p0**2 * t) / eps)
    return (np.pi * s2) ** -0.25 * a**-0.5 * np.exp(-xc**2 / (2 * s2 * a)) * phase


class TestConfig:
    @pytest.mark.parametrize("kw", [{"dt": 0.0}, {"dt": -1e-3}, {"tail_tol": 0.0}, {"nyquist_tol": 1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            PropagatorConfig(**kw)

    def test_default_dt_rule(self, line):
        U = HARMONIC.on_grid(line)
        eps = 0.1
        dx = line.dx[0]
        expected = min(eps / (10 * U.max()), dx**2 / (10 * eps) * 2 / np.pi)
        assert default_dt(line, eps, U) == pytest.approx(expected)
        assert default_dt(line, eps, U, energy_cap=1.0) == pytest.approx(
            min(eps / 10, dx**2 / (10 * eps) * 2 / np.pi))


class TestClosedForms:
    @pytest.mark.parametrize("p0", [0.0, 0.8])
    def test_free_gaussian(self, line, p0):
        eps, s2 = 0.1, 0.1
        x = line.points[..., 0]
        psi0 = Wavefunction(line, eps, free_gaussian(x, 0.0, eps, s2, p0))
        tr = propagate(psi0, FREE, 0.5, PropagatorConfig(dt=0.01), samples=2)
        err = l2_norm(tr.states[-1].replace(tr.states[-1].values - free_gaussian(x, 0.5, eps, s2, p0)))
        assert err <= 1e-8

    def test_ehrenfest_harmonic(self, line):
        x0, p0 = 0.7, -0.4
        psi0 = coherent_state(line, 0.05, [x0], [p0])
        t = np.pi / 4
        tr = propagate(psi0, HARMONIC, t, PropagatorConfig(dt=1e-3), samples=2)
        mean = tr.states[-1].expect_position()[0]
        assert abs(mean - (x0 * np.cos(t) + p0 * np.sin(t))) <= 1e-6

    @pytest.mark.parametrize("s2", [0.05, 0.1, 0.2])
    def test_free_gaussian_energy(self, line, s2):
        eps = 0.1
        x = line.points[..., 0]
        psi = Wavefunction(line, eps, free_gaussian(x, 0.0, eps, s2))

        def kinetic_density(z):
            g = (np.pi * s2) ** -0.25 * np.exp(-z**2 / (2 * s2))
            return 0.5 * (eps * z / s2 * g) ** 2

        oracle, _ = quad(kinetic_density, -np.inf, np.inf)
        assert diagnostics(psi, FREE).energy == pytest.approx(oracle, rel=1e-10)
        assert oracle == pytest.approx(eps**2 / (4 * s2), rel=1e-12)


class TestConservation:
    @pytest.mark.parametrize("name", ["zero", "harmonic"])
    def test_mass_after_1000_steps(self, line, name):
        psi0 = coherent_state(line, 0.1, [0.5], [0.3])
        tr = propagate(psi0, Potential.from_catalog(name), 0.5, PropagatorConfig(dt=5e-4), samples=2)
        assert abs(tr.diagnostics[-1].mass - 1) <= 1e-10

    def test_unitary_step(self, line, rng):
        psi = random_superposition(line, 0.1, rng, p_spread=0.2)
        cfg = PropagatorConfig(dt=1e-3)
        out = step(psi, Potential.from_catalog("cosine"), cfg)
        assert abs(l2_norm(out) - l2_norm(psi)) <= 1e-12

    def test_time_reversal(self, line, rng):
        psi = random_superposition(line, 0.1, rng, p_spread=0.2)
        cfg = PropagatorConfig(dt=2e-3)
        pot = Potential.from_catalog("cosine")
        back = step(step(psi, pot, cfg), pot, cfg, backward=True)
        assert np.max(np.abs(back.values - psi.values)) <= 1e-10

    def test_energy_drift_second_order(self, line):
        psi0 = coherent_state(line, 0.1, [1.0], [0.5])

        def drift(dt):
            tr = propagate(psi0, HARMONIC, 1.0, PropagatorConfig(dt=dt), samples=11)
            e = np.array([d.energy for d in tr.diagnostics])
            return np.max(np.abs(e - e[0]))

        assert drift(0.02) / drift(0.01) >= 3.5

    def test_stepper_matches_propagate(self, line, packet):
        U = HARMONIC.on_grid(line)
        direct = StrangStepper(line, 0.1, U, 0.01).advance(packet.values, 10)
        tr = propagate(packet, HARMONIC, 0.1, PropagatorConfig(dt=0.01), samples=2)
        np.testing.assert_allclose(tr.states[-1].values, direct, atol=1e-13)


class TestGuards:
    def test_tail_overflow(self):
        g = SpatialGrid.uniform(-4.0, 4.0, 128)
        psi = coherent_state(g, 0.1, [0.0], [1.5])
        with pytest.raises(TailOverflow):
            propagate(psi, FREE, 3.0, PropagatorConfig(dt=0.01), samples=4)

    def test_nyquist_violation(self, line):
        # p = 0.9 of the Nyquist momentum puts spectral mass in the outer band
        pmax = line.momentum_grid(0.1).p_max[0]
        psi = coherent_state(line, 0.1, [0.0], [0.85 * pmax], check_margin=False)
        with pytest.raises(NyquistViolation):
            propagate(psi, FREE, 0.1, PropagatorConfig(dt=0.01), samples=2)

    def test_unchecked_run_passes(self, line):
        pmax = line.momentum_grid(0.1).p_max[0]
        psi = coherent_state(line, 0.1, [0.0], [0.85 * pmax], check_margin=False)
        tr = propagate(psi, FREE, 0.1, PropagatorConfig(dt=0.01), samples=2, check=False)
        assert len(tr.diagnostics) == 2


class TestDiagnostics:
    def test_row_layout(self, packet):
        d = diagnostics(packet, HARMONIC, t=0.25)
        assert isinstance(d, QuantumDiagnostics)
        row = d.row()
        assert len(row) == 7
        assert row[0] == 0.25 and row[1] == pytest.approx(1.0)
        assert row[4] == 0.0

    def test_tails_decrease_with_radius(self, packet):
        d = diagnostics(packet, FREE, radii=(0.5, 1.0))
        assert 1 > d.tails[0] > d.tails[1] > 0

    def test_coulomb_moment(self, plane):
        pot = Potential.from_catalog("zero", 2, charges=(1.0, 1.0))
        psi = coherent_state(plane, 0.1, [-1.0, 1.0], [0.0, 0.0])
        d = diagnostics(psi, pot)
        # |psi|^2 concentrates near x1 - x2 = -2, where U_s^2 = 1/4
        assert d.coulomb_moment == pytest.approx(0.25, rel=0.1)

    def test_samples_must_start_at_zero(self, packet):
        with pytest.raises(ValueError):
            propagate(packet, FREE, 1.0, samples=[0.5, 1.0])
