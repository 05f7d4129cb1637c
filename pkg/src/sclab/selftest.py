"""Built-in invariant checks run by ``sclab selftest``.

Each check returns ``(ok, detail)``.  The set is small and fast; the full test suite
lives in the repository's ``tests`` directory.
"""
from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from .classical import FlowConfig, ParticleEnsemble, flow_map
from .error_terms import bound_lipschitz, pair_E_eps, pair_I_eps
from .grid import Axis, SpatialGrid, coherent_state, momentum_density, random_superposition
from .measures import TestDictionary, d_P
from .phase_space import Bump, TestFunction, husimi, husimi_stats, momentum_second_moment, wigner
from .potential import Potential
from .propagator import PropagatorConfig, propagate

__all__ = ["CHECKS", "run_selftest"]


def _grid(N=256, L=16.0, n=1):
    return SpatialGrid(tuple(Axis(-L / 2, L / 2, N) for _ in range(n)))


def check_mass() -> tuple:
    g = _grid()
    worst = 0.0
    for pot in (Potential.from_catalog("zero"), Potential.from_catalog("harmonic")):
        psi = coherent_state(g, 0.1, [0.5], [0.3])
        tr = propagate(psi, pot, 0.5, PropagatorConfig(dt=5e-4), samples=2)
        worst = max(worst, abs(tr.diagnostics[-1].mass - 1))
    return worst <= 1e-10, f"mass drift {worst:.2e}"


def check_wigner() -> tuple:
    eps = 0.1
    g = _grid(512)
    psi = coherent_state(g, eps, [0.3], [-0.4])
    W = wigner(psi)
    X, P = W.x_points[:, None, 0], W.p_points[None, :, 0]
    exact = np.exp(-((X - 0.3) ** 2 + (P + 0.4) ** 2) / eps) / (np.pi * eps)
    err = float(np.abs(W.values - exact).max())
    return err <= 1e-6, f"coherent Wigner error {err:.2e}"


def check_marginals() -> tuple:
    eps = 0.1
    g = _grid(256)
    psi = random_superposition(g, eps, np.random.default_rng(3))
    W = wigner(psi)
    ex = float(np.abs(W.x_marginal() - psi.density()).max())
    ep = float(np.abs(W.p_marginal() - momentum_density(psi)).max())
    return max(ex, ep) <= 1e-6, f"marginal errors {ex:.2e}, {ep:.2e}"


def check_husimi_positive() -> tuple:
    g = _grid(128)
    psi = random_superposition(g, 0.2, np.random.default_rng(5))
    H = husimi(psi)
    return float(H.values.min()) >= -1e-12, f"Husimi min {float(H.values.min()):.2e}"


def check_momentum_identity() -> tuple:
    g = _grid(256)
    psi = random_superposition(g, 0.1, np.random.default_rng(7))
    a, b = momentum_second_moment(psi)
    rel = abs(a - b) / abs(a)
    return rel <= 1e-6, f"relative gap {rel:.2e}"


def check_quadratic_annihilation() -> tuple:
    g = _grid(256)
    psi = coherent_state(g, 0.1, [0.2], [0.5])
    phi = TestFunction.separable(Bump([0.0], 2.0), Bump([0.0], 2.0))
    val = pair_E_eps(Potential.from_catalog("harmonic"), psi, phi)
    return abs(val) <= 1e-8, f"|E pairing| {abs(val):.2e}"


def check_bound() -> tuple:
    g = _grid(256)
    psi = random_superposition(g, 0.1, np.random.default_rng(11))
    pot = Potential.from_catalog("cosine")
    phi = TestFunction.separable(Bump([0.5], 2.0), Bump([0.0], 1.5))
    res = pair_I_eps(pot, psi, phi)
    bound = bound_lipschitz(pot, phi)
    return abs(res.pairing) <= bound, f"|I pairing| {abs(res.pairing):.3g} vs bound {bound:.3g}"


def check_flow() -> tuple:
    T = 1.0
    res = flow_map([[1.0]], [[0.5]], Potential.from_catalog("harmonic"), T, FlowConfig(h=1e-4))
    exact = 1.0 * math.cos(T) + 0.5 * math.sin(T)
    err = abs(float(res.x[-1, 0, 0]) - exact)
    return err <= 1e-8, f"harmonic flow error {err:.2e}"


def check_metric() -> tuple:
    D = TestDictionary((-3, -3), (3, 3))
    a = ParticleEnsemble.dirac([0.0], [0.0])
    b = ParticleEnsemble.dirac([0.01], [0.0])
    c = ParticleEnsemble.dirac([0.02], [0.01])
    dab, dbc, dac = d_P(a, b, D), d_P(b, c, D), d_P(a, c, D)
    ok = d_P(a, a, D) == 0 and dac <= dab + dbc + 1e-15 and dab <= D.lipschitz_sum() * 0.01
    return ok, f"d_P(a,b) {dab:.2e}"


CHECKS: dict[str, Callable[[], tuple]] = {
    "mass": check_mass,
    "wigner": check_wigner,
    "marginals": check_marginals,
    "husimi_positive": check_husimi_positive,
    "momentum_identity": check_momentum_identity,
    "quadratic_annihilation": check_quadratic_annihilation,
    "a_priori_bound": check_bound,
    "classical_flow": check_flow,
    "metric": check_metric,
}


def run_selftest(report=print) -> bool:
    ok_all = True
    for name, fn in CHECKS.items():
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash counts as a failure
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= ok
        report(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - start:.1f}s)")
    report(f"Husimi fields {husimi_stats['fields']}, global min {husimi_stats['min']:.2e}")
    return ok_all
