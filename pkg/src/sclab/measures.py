"""Weak metric on phase-space probability measures, expectation measures and regularity.

The metric is ``d_P(mu, nu) = sum_k 2^-k |int f_k dmu - int f_k dnu|`` for a fixed
dictionary of bounded Lipschitz functions

    f_k(x, p) = Re( exp(i theta_k) A_k(x) B_k(p) ),
    A_k(x) = exp(-|x - a_k|^2 / (2 s_x^2) + i omega_k . x),  B_k likewise in p,

so every member is separable and integrates against a tensor-grid field with two
matrix products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .classical import ParticleEnsemble
from .errors import NotNormalized
from .phase_space import PhaseSpaceField

__all__ = [
    "TestDictionary",
    "d_P",
    "expectation_measure",
    "regularity_check",
    "RegularityReport",
]


@dataclass(frozen=True, eq=False)
class TestDictionary:
    """Deterministic dictionary of ``K`` members built from a seed and a phase-space box.

    ``box_lo``/``box_hi`` have length ``2n`` (x coordinates first).  Envelopes are
    Gaussians with standard deviation ``0.75 * box length`` per coordinate (they cover
    the box enlarged by 1.5), centres are drawn uniformly in the box, and frequencies are
    ``2 pi m / (1.5 * box length)`` with integers ``|m| <= max_freq``.
    """

    box_lo: tuple
    box_hi: tuple
    K: int = 64
    seed: int = 0
    max_freq: int = 4
    centers: np.ndarray = field(init=False, repr=False)
    freqs: np.ndarray = field(init=False, repr=False)
    phases: np.ndarray = field(init=False, repr=False)
    sigma: np.ndarray = field(init=False, repr=False)

    __test__ = False

    def __post_init__(self):
        lo = np.asarray(self.box_lo, dtype=float)
        hi = np.asarray(self.box_hi, dtype=float)
        if lo.shape != hi.shape or lo.size not in (2, 4) or np.any(hi <= lo):
            raise ValueError("box must have 2n = 2 or 4 increasing coordinates")
        object.__setattr__(self, "box_lo", tuple(lo))
        object.__setattr__(self, "box_hi", tuple(hi))
        rng = np.random.default_rng(self.seed)
        d = lo.size
        length = hi - lo
        m = rng.integers(-self.max_freq, self.max_freq + 1, size=(self.K, d))
        # lowest frequencies first: they carry the largest weights
        order = np.lexsort((np.arange(self.K), np.sum(np.abs(m), axis=1)))
        m = m[order]
        m[0] = 0
        centers = lo + rng.random((self.K, d)) * length
        phases = rng.uniform(0, 2 * np.pi, self.K)
        phases[0] = 0.0
        object.__setattr__(self, "freqs", 2 * np.pi * m / (1.5 * length))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "sigma", 0.75 * length)

    @property
    def d(self) -> int:
        return len(self.box_lo)

    @property
    def n(self) -> int:
        return self.d // 2

    @property
    def weights(self) -> np.ndarray:
        return 2.0 ** -np.arange(1, self.K + 1)

    @property
    def lipschitz(self) -> np.ndarray:
        """``L_k = 1/(s_min sqrt(e)) + |omega_k|``."""
        return 1 / (np.min(self.sigma) * np.sqrt(np.e)) + np.linalg.norm(self.freqs, axis=1)

    def lipschitz_sum(self) -> float:
        return math.fsum(self.weights * self.lipschitz)

    def _factor(self, pts: np.ndarray, sl: slice) -> np.ndarray:
        """Complex factors for the coordinates ``sl`` at points ``(..., len)``, shape ``(K, ...)``."""
        c, w, s = self.centers[:, sl], self.freqs[:, sl], self.sigma[sl]
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, pts.shape[-1])
        diff = (flat[None, :, :] - c[:, None, :]) / s
        out = np.exp(-0.5 * np.sum(diff**2, axis=-1) + 1j * np.einsum("md,kd->km", flat, w))
        return out.reshape((self.K,) + pts.shape[:-1])

    def x_factor(self, x) -> np.ndarray:
        return self._factor(x, slice(0, self.n)) * np.exp(1j * self.phases).reshape(
            (self.K,) + (1,) * (np.ndim(x) - 1))

    def p_factor(self, p) -> np.ndarray:
        return self._factor(p, slice(self.n, self.d))

    def evaluate(self, x, p) -> np.ndarray:
        """All members at points; returns ``(K, ...)``."""
        return (self.x_factor(x) * self.p_factor(p)).real

    def particle_integrals(self, ens: ParticleEnsemble) -> np.ndarray:
        F = self.evaluate(ens.x, ens.p)
        return np.array([math.fsum(ens.weights * F[k]) for k in range(self.K)])

    def field_integrals(self, fld: PhaseSpaceField) -> np.ndarray:
        A = self.x_factor(fld.x_points).reshape(self.K, -1)
        B = self.p_factor(fld.p_points).reshape(self.K, -1)
        H = fld.values.reshape(A.shape[1], B.shape[1])
        HB = H @ B.T  # (Nx, K)
        return np.einsum("kx,xk->k", A, HB).real * fld.dx * fld.dp

    def block_integrals(self, x_axes, p_axes, blocks) -> tuple:
        """Stream Husimi blocks from :func:`husimi_blocks`; returns ``(integrals, total_mass)``."""
        X = np.stack(np.meshgrid(*[a.points for a in x_axes], indexing="ij"), axis=-1).reshape(-1, len(x_axes))
        P = np.stack(np.meshgrid(*[a.points for a in p_axes], indexing="ij"), axis=-1).reshape(-1, len(p_axes))
        dv = float(np.prod([a.spacing for a in x_axes]) * np.prod([a.spacing for a in p_axes]))
        B = self.p_factor(P)  # (K, Np)
        BT = np.concatenate([B.real, B.imag]).T  # real matmul: (Np, 2K)
        acc = np.zeros(self.K)
        mass = 0.0
        for flat, vals in blocks:
            H = vals.reshape(len(flat), -1)
            A = self.x_factor(X[flat])  # (K, b)
            HB = H @ BT
            acc += np.einsum("kb,bk->k", A.real, HB[:, :self.K]) - np.einsum("kb,bk->k", A.imag, HB[:, self.K:])
            mass += float(H.sum())
        return acc * dv, mass * dv

    def header(self) -> dict:
        return {
            "seed": int(self.seed),
            "K": int(self.K),
            "max_freq": int(self.max_freq),
            "box_lo": list(self.box_lo),
            "box_hi": list(self.box_hi),
            "freqs": self.freqs.round(12).tolist(),
            "centers": self.centers.round(12).tolist(),
            "phases": self.phases.round(12).tolist(),
        }


Measure = Union[ParticleEnsemble, PhaseSpaceField, np.ndarray]


def _integrals(D: TestDictionary, mu: Measure, tol: float) -> np.ndarray:
    if isinstance(mu, ParticleEnsemble):
        return D.particle_integrals(mu)
    if isinstance(mu, PhaseSpaceField):
        total = mu.total()
        if abs(total - 1) > tol:
            raise NotNormalized(f"field integrates to {total:.8g}")
        return D.field_integrals(mu)
    arr = np.asarray(mu, dtype=float)
    if arr.shape != (D.K,):
        raise TypeError("expected an ensemble, a phase-space field or a vector of K integrals")
    return arr


def d_P(mu: Measure, nu: Measure, dictionary: TestDictionary, tol: float = 1e-6) -> float:
    """``sum_k 2^-k |int f_k dmu - int f_k dnu|`` for ensembles, fields or precomputed integrals."""
    a = _integrals(dictionary, mu, tol)
    b = _integrals(dictionary, nu, tol)
    return math.fsum(dictionary.weights * np.abs(a - b))


def expectation_measure(ensembles: Sequence[ParticleEnsemble], probs: Sequence[float] | None = None
                        ) -> ParticleEnsemble:
    """``E nu = sum_w P(w) mu_w`` as a weighted union of particles."""
    if probs is None:
        probs = np.full(len(ensembles), 1.0 / len(ensembles))
    return ParticleEnsemble.combine(ensembles, probs)


@dataclass(frozen=True)
class RegularityReport:
    max_density: float
    C: float
    h_kde: float
    regular: bool
    dimension: int


def regularity_check(ens: ParticleEnsemble, C: float, h_kde: float, coords: str = "phase",
                     probes: np.ndarray | None = None, rel_tol: float = 0.1) -> RegularityReport:
    """Gaussian KDE of the ensemble density and the comparison ``max <= C (1 + rel_tol)``.

    ``coords`` selects phase space (dimension 2n) or positions only.  Probes default to
    the particle locations.  The estimate is biased low at fixed ``h_kde`` near
    concentrations; the report is informational.
    """
    pts = ens.z if coords == "phase" else ens.x
    d = pts.shape[1]
    probes = pts if probes is None else np.atleast_2d(probes)
    norm = (2 * np.pi * h_kde**2) ** (-d / 2)
    best = 0.0
    for i in range(0, len(probes), 512):
        q = probes[i:i + 512]
        r2 = np.sum((q[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        dens = np.exp(-r2 / (2 * h_kde**2)) @ ens.weights * norm
        best = max(best, float(dens.max()))
    return RegularityReport(best, float(C), float(h_kde), best <= C * (1 + rel_tol), d)
