"""Classical flow ``x' = p, p' = -grad U`` for particle ensembles, and measure paths.

Integration is velocity Verlet.  Near the singular set each macro step is split into
substeps of length ``h min(1, (dist/r_ref)^2)`` with ``r_ref = 10 r_guard``; particles
that come closer than ``r_guard`` are frozen and flagged as absorbed.  Above an energy
level ``M`` the step is reduced by ``sqrt(E/M)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson, trapezoid

from .phase_space import TestFunction, TimeBump
from .potential import Potential

__all__ = [
    "FlowConfig",
    "ParticleEnsemble",
    "FlowResult",
    "MeasurePath",
    "flow_map",
    "push_forward",
    "liouville_residual",
    "dist_integrability",
    "jacobian_fd",
    "symplectic_defect",
    "weighted_sum",
]


def weighted_sum(weights: np.ndarray, values: np.ndarray) -> float:
    """Correctly rounded ``sum w_i v_i``; independent of particle order."""
    return math.fsum(np.asarray(weights, dtype=float) * np.asarray(values, dtype=float))


@dataclass(frozen=True)
class FlowConfig:
    h: float = 1e-3
    r_guard: float = 1e-3
    energy_cutoff: Optional[float] = None
    beta: float = 2.0
    max_substeps: int = 10_000

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.r_guard > 0:
            raise ValueError("r_guard must be positive")
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if self.energy_cutoff is not None and not self.energy_cutoff > 0:
            raise ValueError("energy_cutoff must be positive")

    @property
    def r_ref(self) -> float:
        return 10 * self.r_guard


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Weighted phase-space particles; weights sum to one, absorbed particles included."""

    x: np.ndarray
    p: np.ndarray
    weights: np.ndarray
    absorbed: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        p = np.atleast_2d(np.asarray(self.p, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if x.shape != p.shape or x.shape[0] != w.shape[0]:
            raise ValueError("x, p and weights must describe the same particles")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(math.fsum(w) - 1) > 1e-12:
            raise ValueError(f"weights sum to {math.fsum(w)!r}, not 1")
        ab = np.zeros(len(w), dtype=bool) if self.absorbed is None else np.asarray(self.absorbed, dtype=bool)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "absorbed", ab)

    @classmethod
    def dirac(cls, x, p) -> "ParticleEnsemble":
        return cls(np.atleast_2d(x), np.atleast_2d(p), [1.0])

    @classmethod
    def uniform(cls, x, p) -> "ParticleEnsemble":
        x = np.atleast_2d(x)
        return cls(x, p, np.full(len(x), 1.0 / len(x)))

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.p], axis=1)

    def absorbed_mass(self) -> float:
        return math.fsum(self.weights[self.absorbed])

    def expectation(self, f) -> float:
        """``int f dmu`` for ``f(x, p)`` vectorised over particles."""
        return weighted_sum(self.weights, f(self.x, self.p))

    def moved(self, x, p, absorbed=None) -> "ParticleEnsemble":
        return ParticleEnsemble(x, p, self.weights, self.absorbed if absorbed is None else absorbed)

    @staticmethod
    def combine(parts: Sequence["ParticleEnsemble"], probs: Sequence[float]) -> "ParticleEnsemble":
        """Convex combination as a weighted union of particle lists."""
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0) or abs(math.fsum(probs) - 1) > 1e-12:
            raise ValueError("mixing probabilities must be nonnegative and sum to 1")
        x = np.concatenate([e.x for e in parts])
        p = np.concatenate([e.p for e in parts])
        w = np.concatenate([q * e.weights for q, e in zip(probs, parts)])
        ab = np.concatenate([e.absorbed for e in parts])
        # renormalise only the roundoff of the products
        w = w / math.fsum(w)
        return ParticleEnsemble(x, p, w, ab)


@dataclass
class FlowResult:
    times: np.ndarray
    x: np.ndarray  # (nt, m, n)
    p: np.ndarray
    absorbed: np.ndarray  # (m,) final flags
    absorbed_at: np.ndarray  # (m,) absorption time or nan
    substeps: int = 0


def _substeps(x, p, pot: Potential, config: FlowConfig, active) -> np.ndarray:
    s = np.ones(len(x), dtype=int)
    if pot.has_singular:
        d = pot.dist_to_S(x)
        frac = np.minimum(1.0, (d / config.r_ref) ** 2)
        s = np.ceil(1.0 / np.maximum(frac, 1.0 / config.max_substeps)).astype(int)
    if config.energy_cutoff is not None:
        with np.errstate(invalid="ignore"):
            e = pot.energy(x, p)
        s = np.maximum(s, np.ceil(np.sqrt(np.maximum(e, 0) / config.energy_cutoff)).astype(int))
    s = np.minimum(s, config.max_substeps)
    s[~active] = 0
    return s


def _grad(pot: Potential, x, active):
    g = np.zeros_like(x)
    if np.any(active):
        g[active] = pot.evaluate_grad(x[active])
    return g


def flow_map(x, p, pot: Potential, T: float, config: FlowConfig = FlowConfig(),
             samples: int | Sequence[float] = 2) -> FlowResult:
    """Transport particles ``(x, p)`` (arrays ``(m, n)``) to time ``T``, recording sample times.

    ``T`` may be negative (backward flow).  ``samples`` is a count of equispaced times in
    ``[0, T]`` or an explicit monotone list starting at 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    p = np.atleast_2d(np.asarray(p, dtype=float)).copy()
    times = np.linspace(0.0, T, samples) if isinstance(samples, int) else np.asarray(samples, dtype=float)
    if times[0] != 0:
        raise ValueError("sample times must start at 0")
    m = len(x)
    active = np.ones(m, dtype=bool)
    absorbed_at = np.full(m, np.nan)
    if pot.has_singular:
        d0 = pot.dist_to_S(x)
        active &= d0 >= config.r_guard
        absorbed_at[~active] = 0.0
    xs, ps = [x.copy()], [p.copy()]
    g = _grad(pot, x, active)
    total_sub = 0
    prev = 0.0
    for t in times[1:]:
        interval = t - prev
        nsteps = max(1, math.ceil(abs(interval) / config.h - 1e-9))
        h = interval / nsteps
        for k in range(nsteps):
            sub = _substeps(x, p, pot, config, active)
            smax = int(sub.max()) if m else 0
            total_sub += int(sub.sum())
            if smax <= 1:
                # plain Verlet on all active particles
                a = active
                p[a] -= 0.5 * h * g[a]
                x[a] += h * p[a]
                g = _grad(pot, x, a)
                p[a] -= 0.5 * h * g[a]
            else:
                hl = np.where(sub > 0, h / np.maximum(sub, 1), 0.0)[:, None]
                for j in range(smax):
                    a = active & (sub > j)
                    if not np.any(a):
                        break
                    p[a] -= 0.5 * hl[a] * g[a]
                    x[a] += hl[a] * p[a]
                    if pot.has_singular:
                        hit = a & (pot.dist_to_S(x) < config.r_guard)
                        if np.any(hit):
                            active &= ~hit
                            absorbed_at[hit] = prev + (k + 1) * h
                            a = a & ~hit
                    g = _grad(pot, x, active)
                    p[a] -= 0.5 * hl[a] * g[a]
            if pot.has_singular:
                hit = active & (pot.dist_to_S(x) < config.r_guard)
                if np.any(hit):
                    active &= ~hit
                    absorbed_at[hit] = prev + (k + 1) * h
                    g = _grad(pot, x, active)
        xs.append(x.copy())
        ps.append(p.copy())
        prev = t
    return FlowResult(times, np.array(xs), np.array(ps), ~active, absorbed_at, total_sub)


@dataclass
class MeasurePath:
    """Time-indexed particle ensembles ``mu_t``."""

    times: np.ndarray
    ensembles: list
    info: dict = field(default_factory=dict)

    def absorbed_mass(self) -> np.ndarray:
        return np.array([e.absorbed_mass() for e in self.ensembles])

    def __len__(self):
        return len(self.times)


def push_forward(mu: ParticleEnsemble, pot: Potential, T: float, config: FlowConfig = FlowConfig(),
                 samples: int | Sequence[float] = 16) -> MeasurePath:
    """``mu_t = X(t, .)_# mu`` sampled in time; weights unchanged, absorption flagged."""
    res = flow_map(mu.x, mu.p, pot, T, config, samples)
    ens = []
    for i, t in enumerate(res.times):
        flags = mu.absorbed | (res.absorbed_at <= t + 1e-15) if T >= 0 else mu.absorbed | (
            res.absorbed_at >= t - 1e-15)
        ens.append(ParticleEnsemble(res.x[i], res.p[i], mu.weights, flags))
    return MeasurePath(res.times, ens, {"substeps": res.substeps, "h": config.h})


def liouville_residual(path: MeasurePath, pot: Potential, phi: TestFunction, weight: TimeBump,
                       tube: float = 0.0, signed: bool = False) -> float:
    """``| int [w'(t) int phi dmu_t + w(t) int <b, grad phi> dmu_t] dt |`` by Simpson's rule.

    ``signed`` returns the value before the absolute value, which is linear in the path.
    """
    phi.check_away_from(pot, tube)
    f1, f2 = [], []
    for e in path.ensembles:
        x, p = e.x, e.p
        gx, gp = phi.grad_x(x, p), phi.grad_p(x, p)
        gU = np.zeros_like(x)
        # where phi vanishes (near S) the gradient is never needed
        need = np.any(gp != 0, axis=-1)
        if np.any(need):
            gU[need] = pot.evaluate_grad(x[need])
        f1.append(weighted_sum(e.weights, phi(x, p)))
        f2.append(weighted_sum(e.weights, np.sum(p * gx, axis=-1) - np.sum(gU * gp, axis=-1)))
    t = np.asarray(path.times, dtype=float)
    val = simpson(weight.derivative(t) * np.asarray(f1), x=t) + simpson(weight(t) * np.asarray(f2), x=t)
    return float(val) if signed else float(abs(val))


@dataclass(frozen=True)
class IntegrabilityReport:
    deltas: tuple
    values: tuple
    beta: float
    R: float

    @property
    def raw(self) -> float:
        return self.values[self.deltas.index(0.0)] if 0.0 in self.deltas else float("nan")


def dist_integrability(path: MeasurePath, pot: Potential, R: float, beta: float = 2.0,
                       deltas: Sequence[float] = (0.0, 1e-3, 1e-2, 1e-1)) -> IntegrabilityReport:
    """``int_0^T int_{B_R} (dist(x,S)^beta + delta)^-1 dmu_t dt`` for each ``delta``.

    ``B_R`` is the phase-space ball ``|(x, p)| <= R``; time quadrature is the trapezoid rule.
    """
    if not pot.has_singular:
        raise ValueError("the integrability diagnostic needs an enabled singular part")
    t = np.asarray(path.times, dtype=float)
    vals = []
    for delta in deltas:
        per_t = []
        for e in path.ensembles:
            inside = np.sum(e.z**2, axis=-1) <= R**2
            d = pot.dist_to_S(e.x)
            with np.errstate(divide="ignore"):
                f = np.where(inside, 1.0 / (d**beta + delta), 0.0)
            per_t.append(weighted_sum(e.weights, f))
        vals.append(float(trapezoid(per_t, t)))
    return IntegrabilityReport(tuple(float(d) for d in deltas), tuple(vals), float(beta), float(R))


def jacobian_fd(x, p, pot: Potential, T: float, config: FlowConfig = FlowConfig(), delta: float = 1e-6
                ) -> np.ndarray:
    """Central finite-difference Jacobian of the flow map at one point, shape ``(2n, 2n)``."""
    z = np.concatenate([np.ravel(x), np.ravel(p)]).astype(float)
    n = len(z) // 2
    probes = np.concatenate([z + delta * np.eye(2 * n), z - delta * np.eye(2 * n)])
    res = flow_map(probes[:, :n], probes[:, n:], pot, T, config)
    end = np.concatenate([res.x[-1], res.p[-1]], axis=1)
    return ((end[:2 * n] - end[2 * n:]) / (2 * delta)).T


def symplectic_defect(J: np.ndarray) -> float:
    """``max |J^T Omega J - Omega|``; zero for a symplectic map."""
    n = J.shape[0] // 2
    omega = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    return float(np.max(np.abs(J.T @ omega @ J - omega)))
