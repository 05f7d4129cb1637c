"""Strang-split propagation of ``i eps d_t psi = -eps^2/2 Lap psi + U psi``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NyquistViolation, TailOverflow
from .grid import Wavefunction, boundary_mass, edge_spectral_mass, laplacian
from .potential import Potential

__all__ = [
    "PropagatorConfig",
    "QuantumDiagnostics",
    "Trajectory",
    "StrangStepper",
    "default_dt",
    "check_guards",
    "spatial_tail",
    "step",
    "propagate",
    "diagnostics",
]


@dataclass(frozen=True)
class PropagatorConfig:
    dt: Optional[float] = None
    tail_tol: float = 1e-6
    tail_layer: float = 0.05
    nyquist_tol: float = 1e-6
    nyquist_band: float = 0.75
    tail_radii: tuple = (2.0, 4.0)
    tail_center: Optional[tuple] = None
    # caps sup|U| in the default time-step rule (energy truncation of stiff regions)
    energy_cap: Optional[float] = None

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        for tol in (self.tail_tol, self.nyquist_tol):
            if not 0 < tol < 1:
                raise ValueError("tolerances must lie in (0, 1)")


@dataclass(frozen=True)
class QuantumDiagnostics:
    t: float
    mass: float
    energy: float
    Hnorm2: float
    coulomb_moment: float
    tails: tuple

    def row(self) -> list:
        return [self.t, self.mass, self.energy, self.Hnorm2, self.coulomb_moment, *self.tails]


def default_dt(grid, eps: float, U: np.ndarray, energy_cap: Optional[float] = None) -> float:
    """``min(eps / (10 sup|U|), dx^2/(10 eps) * 2/pi)``."""
    sup_u = float(np.max(np.abs(U)))
    if energy_cap is not None:
        sup_u = min(sup_u, energy_cap)
    dx = float(np.min(grid.dx))
    kinetic = dx**2 / (10 * eps) * 2 / np.pi
    return min(eps / (10 * sup_u), kinetic) if sup_u > 0 else kinetic


def spatial_tail(psi: Wavefunction, layer: float = 0.05) -> float:
    return boundary_mass(psi, layer)


def check_guards(psi: Wavefunction, config: PropagatorConfig):
    tail = boundary_mass(psi, config.tail_layer)
    if tail > config.tail_tol:
        raise TailOverflow(f"boundary mass {tail:.3g} exceeds {config.tail_tol:.3g}")
    edge = edge_spectral_mass(psi, config.nyquist_band)
    if edge > config.nyquist_tol:
        raise NyquistViolation(f"spectral edge mass {edge:.3g} exceeds {config.nyquist_tol:.3g}")


class StrangStepper:
    """Precomputed exact phase factors for a fixed ``(grid, eps, U, dt)``.

    ``dt`` may be negative, which runs the scheme backwards in time.
    """

    def __init__(self, grid, eps: float, U: np.ndarray, dt: float):
        self.grid, self.eps, self.dt = grid, float(eps), float(dt)
        self.U = U
        self.half_v = np.exp(-0.5j * dt * U / eps)
        self.full_v = self.half_v**2
        self.kinetic = np.exp(-0.5j * dt * eps * grid.k_squared())

    def advance(self, values: np.ndarray, steps: int) -> np.ndarray:
        if steps <= 0:
            return values
        fft, ifft = np.fft.fftn, np.fft.ifftn
        v = values * self.half_v
        for s in range(steps):
            v = ifft(fft(v) * self.kinetic)
            v = v * (self.full_v if s < steps - 1 else self.half_v)
        return v


def step(psi: Wavefunction, pot: Potential, config: PropagatorConfig, backward: bool = False,
         check: bool = True) -> Wavefunction:
    if check:
        check_guards(psi, config)
    U = pot.on_grid(psi.grid)
    dt = config.dt or default_dt(psi.grid, psi.eps, U, config.energy_cap)
    stepper = StrangStepper(psi.grid, psi.eps, U, -dt if backward else dt)
    return psi.replace(stepper.advance(psi.values, 1))


def diagnostics(psi: Wavefunction, pot: Potential, t: float = 0.0, radii: Sequence[float] = (2.0, 4.0),
                center=None, U: Optional[np.ndarray] = None) -> QuantumDiagnostics:
    grid = psi.grid
    eps = psi.eps
    dv = grid.cell_volume
    rho = psi.density()
    if U is None:
        U = pot.on_grid(grid)
    hat = np.fft.fftn(psi.values)
    kin = 0.5 * eps**2 * np.sum(grid.k_squared() * np.abs(hat) ** 2) / hat.size * dv
    energy = float(kin + np.sum(U * rho) * dv)
    h_psi = -0.5 * eps**2 * laplacian(psi) + U * psi.values
    hnorm2 = float(np.sum(np.abs(h_psi) ** 2) * dv)
    us = pot.singular_value(grid.points) if pot.has_singular else None
    cm = float(np.sum(us**2 * rho) * dv) if us is not None else 0.0
    c = np.zeros(grid.n) if center is None else np.asarray(center, dtype=float)
    r = np.sqrt(np.sum((grid.points - c) ** 2, axis=-1))
    tails = tuple(float(np.sum(rho[r > R]) * dv) for R in radii)
    return QuantumDiagnostics(float(t), float(np.sum(rho) * dv), energy, hnorm2, cm, tails)


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    diagnostics: list = field(default_factory=list)
    dt: float = 0.0

    def csv_rows(self) -> list:
        return [d.row() for d in self.diagnostics]


def propagate(
    psi0: Wavefunction,
    pot: Potential,
    T: float,
    config: PropagatorConfig = PropagatorConfig(),
    samples: int | Sequence[float] = 16,
    callback: Optional[Callable[[float, Wavefunction], None]] = None,
    keep_states: bool = True,
    check: bool = True,
) -> Trajectory:
    """Evolve ``psi0`` to time ``T`` recording states and diagnostics at sample times.

    ``samples`` is either a number of equispaced times in ``[0, T]`` (endpoints
    included) or an explicit increasing sequence starting at 0.
    """
    if isinstance(samples, int):
        times = np.linspace(0.0, T, samples)
    else:
        times = np.asarray(samples, dtype=float)
    if times[0] != 0 or np.any(np.diff(times) <= 0):
        raise ValueError("sample times must start at 0 and increase")
    grid, eps = psi0.grid, psi0.eps
    U = pot.on_grid(grid)
    dt = config.dt or default_dt(grid, eps, U, config.energy_cap)
    radii = config.tail_radii
    values = psi0.values
    states, diags = [], []
    steppers = {}
    prev = 0.0
    for t in times:
        interval = t - prev
        if interval > 0:
            nsteps = max(1, math.ceil(interval / dt - 1e-9))
            h = interval / nsteps
            key = round(h, 15)
            if key not in steppers:
                steppers[key] = StrangStepper(grid, eps, U, h)
            values = steppers[key].advance(values, nsteps)
        psi = psi0.replace(values)
        if check:
            check_guards(psi, config)
        diags.append(diagnostics(psi, pot, t, radii, config.tail_center, U))
        if keep_states:
            states.append(psi)
        if callback is not None:
            callback(float(t), psi)
        prev = t
    return Trajectory(times, states, diags, dt)
