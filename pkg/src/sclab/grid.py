"""Uniform periodic grids, wavefunctions and eps-scaled Fourier analysis.

Grid nodes are cell centred, ``x_j = lo + (j + 1/2) dx``.  The forward
transform uses the kernel ``exp(-i p.x / eps)``::

    (F_eps psi)(p) = int exp(-i p.x / eps) psi(x) dx = (F psi)(p / eps)

so that ``(2 pi eps)^-n |F_eps psi|^2`` is the momentum density and
``sum |F_eps psi|^2 dp^n (2 pi eps)^-n == ||psi||^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import OutOfBox, ZeroNorm

__all__ = [
    "Axis",
    "SpatialGrid",
    "MomentumGrid",
    "Wavefunction",
    "MomentumAmplitude",
    "PolyBump",
    "normalize",
    "l2_norm",
    "eps_fourier",
    "inverse_eps_fourier",
    "momentum_density",
    "gradient",
    "laplacian",
    "coherent_state",
    "wave_packet",
    "random_superposition",
    "boundary_mass",
    "edge_spectral_mass",
]


@dataclass(frozen=True)
class Axis:
    """Uniform cell-centred lattice on ``[lo, hi)`` with ``count`` points."""

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 1 or not self.hi > self.lo:
            raise ValueError(f"invalid axis {self}")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.count

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def points(self) -> np.ndarray:
        return self.lo + (np.arange(self.count) + 0.5) * self.spacing

    @classmethod
    def from_points(cls, points) -> "Axis":
        points = np.asarray(points, dtype=float)
        if points.size == 1:
            raise ValueError("need at least two points to infer a spacing")
        h = points[1] - points[0]
        return cls(float(points[0] - h / 2), float(points[0] - h / 2 + points.size * h), int(points.size))


def _mesh(axes: Sequence[Axis]) -> np.ndarray:
    grids = np.meshgrid(*[a.points for a in axes], indexing="ij")
    return np.stack(grids, axis=-1)


@dataclass(frozen=True)
class SpatialGrid:
    """Tensor grid in dimension 1 or 2; every axis has a power-of-two size >= 16."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(self.axes)
        object.__setattr__(self, "axes", axes)
        if len(axes) not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        for a in axes:
            if a.count < 16 or a.count & (a.count - 1):
                raise ValueError(f"axis size must be a power of two >= 16, got {a.count}")

    @classmethod
    def uniform(cls, lo, hi, count, n=1) -> "SpatialGrid":
        """Same ``[lo, hi)`` and ``count`` on each of the ``n`` axes (scalars are broadcast)."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
        count = np.broadcast_to(np.asarray(count, dtype=int), (n,))
        return cls(tuple(Axis(float(a), float(b), int(c)) for a, b, c in zip(lo, hi, count)))

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.count for a in self.axes)

    @property
    def dx(self) -> np.ndarray:
        return np.array([a.spacing for a in self.axes])

    @property
    def lengths(self) -> np.ndarray:
        return np.array([a.length for a in self.axes])

    @property
    def lo(self) -> np.ndarray:
        return np.array([a.lo for a in self.axes])

    @property
    def hi(self) -> np.ndarray:
        return np.array([a.hi for a in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        return _mesh(self.axes)

    def wavenumbers(self) -> list:
        """Angular wavenumbers per axis in FFT order."""
        return [2 * np.pi * np.fft.fftfreq(a.count, a.spacing) for a in self.axes]

    def k_squared(self) -> np.ndarray:
        ks = np.meshgrid(*self.wavenumbers(), indexing="ij")
        return sum(k**2 for k in ks)

    def momentum_grid(self, eps: float) -> "MomentumGrid":
        return MomentumGrid(self, float(eps))


@dataclass(frozen=True)
class MomentumGrid:
    """Dual grid ``p_k = 2 pi eps k / L`` with ``k = -N/2 .. N/2 - 1`` (ascending)."""

    grid: SpatialGrid
    eps: float

    @property
    def axes(self) -> tuple:
        out = []
        for a in self.grid.axes:
            dp = 2 * np.pi * self.eps / a.length
            lo = dp * (-(a.count // 2) - 0.5)
            out.append(Axis(lo, lo + a.count * dp, a.count))
        return tuple(out)

    @property
    def dp(self) -> np.ndarray:
        return 2 * np.pi * self.eps / self.grid.lengths

    @property
    def p_max(self) -> np.ndarray:
        """Largest covered |p| per axis (Nyquist momentum)."""
        return np.pi * self.eps / self.grid.dx

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dp))

    @property
    def points(self) -> np.ndarray:
        return _mesh(self.axes)


@dataclass(frozen=True, eq=False)
class Wavefunction:
    grid: SpatialGrid
    eps: float
    values: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", values)

    def replace(self, values, **info) -> "Wavefunction":
        return Wavefunction(self.grid, self.eps, values, {**self.info, **info})

    def norm(self) -> float:
        return l2_norm(self)

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def inner(self, other: "Wavefunction") -> complex:
        """``<self, other>``, antilinear in ``self``."""
        return complex(np.vdot(self.values, other.values) * self.grid.cell_volume)

    def expect_position(self) -> np.ndarray:
        rho = self.density() * self.grid.cell_volume
        pts = self.grid.points
        return np.array([np.sum(rho * pts[..., i]) for i in range(self.grid.n)])


@dataclass(frozen=True, eq=False)
class MomentumAmplitude:
    """``F_eps psi`` sampled on a momentum grid (ascending order)."""

    mgrid: MomentumGrid
    values: np.ndarray

    def density(self) -> np.ndarray:
        n = self.mgrid.grid.n
        return np.abs(self.values) ** 2 / (2 * np.pi * self.mgrid.eps) ** n


def l2_norm(psi: Wavefunction) -> float:
    return float(np.sqrt(np.sum(np.abs(psi.values) ** 2) * psi.grid.cell_volume))


def normalize(psi: Wavefunction) -> Wavefunction:
    nrm = l2_norm(psi)
    if not nrm >= 1e-300:
        raise ZeroNorm("cannot normalize a wavefunction with zero norm")
    return psi.replace(psi.values / nrm)


def _shift_phase(grid: SpatialGrid) -> np.ndarray:
    """``exp(-i kappa . x_0)`` on the FFT-ordered wavenumber mesh."""
    phase = 1.0
    for i, (a, k) in enumerate(zip(grid.axes, grid.wavenumbers())):
        shape = [1] * grid.n
        shape[i] = a.count
        phase = phase * np.exp(-1j * k * a.points[0]).reshape(shape)
    return phase


def eps_fourier(psi: Wavefunction) -> MomentumAmplitude:
    grid = psi.grid
    vals = np.fft.fftn(psi.values) * _shift_phase(grid) * grid.cell_volume
    return MomentumAmplitude(grid.momentum_grid(psi.eps), np.fft.fftshift(vals))


def inverse_eps_fourier(amp: MomentumAmplitude) -> Wavefunction:
    grid = amp.mgrid.grid
    vals = np.fft.ifftshift(amp.values) / _shift_phase(grid) / grid.cell_volume
    return Wavefunction(grid, amp.mgrid.eps, np.fft.ifftn(vals))


def momentum_density(psi: Wavefunction) -> np.ndarray:
    """``(2 pi eps)^-n |F psi|^2 (p/eps)`` on the momentum grid."""
    return eps_fourier(psi).density()


def gradient(psi: Wavefunction) -> np.ndarray:
    """Spectral gradient, shape ``(n, *grid.shape)``."""
    grid = psi.grid
    hat = np.fft.fftn(psi.values)
    ks = np.meshgrid(*grid.wavenumbers(), indexing="ij")
    return np.stack([np.fft.ifftn(1j * k * hat) for k in ks])


def laplacian(psi: Wavefunction) -> np.ndarray:
    hat = np.fft.fftn(psi.values)
    return np.fft.ifftn(-psi.grid.k_squared() * hat)


def _check_margin(grid: SpatialGrid, eps: float, y, p, margin: float):
    y = np.broadcast_to(np.asarray(y, dtype=float), (grid.n,))
    p = np.broadcast_to(np.asarray(p, dtype=float), (grid.n,))
    pmax = grid.momentum_grid(eps).p_max
    if np.any(y - margin < grid.lo) or np.any(y + margin > grid.hi):
        raise OutOfBox(f"position {y} closer than {margin:.3g} to the box edge")
    if np.any(np.abs(p) + margin > pmax):
        raise OutOfBox(f"momentum {p} closer than {margin:.3g} to the momentum cutoff {pmax}")
    return y, p


def coherent_state(grid: SpatialGrid, eps: float, y, p, check_margin: bool = True) -> Wavefunction:
    """Gaussian coherent state centred at ``(y, p)``, normalised to one.

    The unnormalised profile ``eps^(-n/2) (pi eps)^(-n/4) exp(-|x-y|^2/(2 eps) + i p.x/eps)``
    has norm ``eps^(-n/2)``; its discrete norm is reported as ``info["raw_norm"]``.
    """
    n = grid.n
    if check_margin:
        y, p = _check_margin(grid, eps, y, p, 5 * np.sqrt(eps))
    else:
        y = np.broadcast_to(np.asarray(y, dtype=float), (n,))
        p = np.broadcast_to(np.asarray(p, dtype=float), (n,))
    x = grid.points
    r2 = np.sum((x - y) ** 2, axis=-1)
    raw = eps ** (-n / 2) * (np.pi * eps) ** (-n / 4) * np.exp(-r2 / (2 * eps) + 1j * (x @ p) / eps)
    raw_norm = float(np.sqrt(np.sum(np.abs(raw) ** 2) * grid.cell_volume))
    info = {"y": tuple(y), "p": tuple(p), "raw_norm": raw_norm}
    return Wavefunction(grid, eps, raw / raw_norm, info)


@dataclass(frozen=True)
class PolyBump:
    """Radial envelope ``(1 - |u|^2 / R^2)^k`` on ``|u| < R`` (C^{k-1}, compact).

    The default ``k = 6`` has a fast-decaying spectrum while keeping compact support.
    """

    radius: float = 2.5
    power: int = 6

    @property
    def support_radius(self) -> float:
        return self.radius

    def __call__(self, u: np.ndarray) -> np.ndarray:
        r2 = np.sum(np.asarray(u) ** 2, axis=-1) / self.radius**2
        return np.where(r2 < 1, np.clip(1 - r2, 0, None) ** self.power, 0.0)


def wave_packet(
    grid: SpatialGrid,
    eps: float,
    alpha: float,
    x0,
    p0,
    envelope: Optional[Callable] = None,
) -> Wavefunction:
    """``eps^(-n alpha/2) phi0((x - x0)/eps^alpha) exp(i x.p0/eps)``, normalised."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    envelope = envelope or PolyBump()
    n = grid.n
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n,))
    p0 = np.broadcast_to(np.asarray(p0, dtype=float), (n,))
    scale = eps**alpha
    reach = getattr(envelope, "support_radius", None)
    if reach is not None:
        r = reach * scale
        if np.any(x0 - r < grid.lo) or np.any(x0 + r > grid.hi):
            raise OutOfBox(f"packet support of radius {r:.3g} around {x0} leaves the box")
    x = grid.points
    vals = eps ** (-n * alpha / 2) * envelope((x - x0) / scale) * np.exp(1j * (x @ p0) / eps)
    psi = normalize(Wavefunction(grid, eps, vals))
    return psi.replace(psi.values, w=(tuple(x0), tuple(p0)), alpha=alpha)


def random_superposition(grid: SpatialGrid, eps: float, rng: np.random.Generator, terms: int = 3,
                         spread: float = 0.3, p_spread: float = 0.3) -> Wavefunction:
    """Normalised sum of ``terms`` coherent states with random centres and complex weights.

    Centres are drawn within ``spread`` times the half box around the box centre and with
    momenta up to ``p_spread`` times the Nyquist momentum.
    """
    centre = (grid.lo + grid.hi) / 2
    half = grid.lengths / 2
    pmax = grid.momentum_grid(eps).p_max
    vals = np.zeros(grid.shape, dtype=complex)
    for _ in range(terms):
        y = centre + spread * half * rng.uniform(-1, 1, grid.n)
        p = p_spread * pmax * rng.uniform(-1, 1, grid.n)
        c = rng.normal() + 1j * rng.normal()
        vals += c * coherent_state(grid, eps, y, p, check_margin=False).values
    return normalize(Wavefunction(grid, eps, vals))


def boundary_mass(psi: Wavefunction, layer: float = 0.05) -> float:
    """Probability in the slabs within ``layer * L`` of any box edge."""
    grid = psi.grid
    mask = np.zeros(grid.shape, dtype=bool)
    for i, a in enumerate(grid.axes):
        x = a.points
        edge = (x < a.lo + layer * a.length) | (x > a.hi - layer * a.length)
        shape = [1] * grid.n
        shape[i] = a.count
        mask |= edge.reshape(shape)
    return float(np.sum(psi.density()[mask]) * grid.cell_volume)


def edge_spectral_mass(psi: Wavefunction, band: float = 0.75) -> float:
    """Fraction of the norm carried by modes with ``|k_i| > band * k_Nyquist`` on any axis."""
    grid = psi.grid
    hat2 = np.abs(np.fft.fftn(psi.values)) ** 2
    mask = np.zeros(grid.shape, dtype=bool)
    for i, (a, k) in enumerate(zip(grid.axes, grid.wavenumbers())):
        edge = np.abs(k) > band * np.pi / a.spacing
        shape = [1] * grid.n
        shape[i] = a.count
        mask |= edge.reshape(shape)
    total = hat2.sum()
    return float(hat2[mask].sum() / total) if total > 0 else 0.0
