"""Wigner and Husimi transforms, test functions and pairings.

The Wigner integral is evaluated on the half-step lattice ``s = m dx/2`` obtained by
spectral (trigonometric) upsampling of the wavefunction, so that the resulting
momentum axis coincides with the full momentum grid of the spatial grid.

The Husimi transform is computed from coherent-state overlaps,
``(2 pi eps)^-n |<psi, phi_{y,p}>|^2`` with unit-norm coherent states, which makes it
non-negative by construction.  Overlaps for all momenta at a given centre ``y`` are
one FFT over a window of the grid around ``y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.fft import next_fast_len
from scipy.integrate import simpson

from .errors import BoundViolation, NonSeparable, SupportViolation, TailOverflow
from .grid import Axis, SpatialGrid, Wavefunction, boundary_mass, eps_fourier

__all__ = [
    "PhaseSpaceField",
    "Bump",
    "TestFunction",
    "TimeBump",
    "PairingResult",
    "ResidualReport",
    "upsample",
    "correlation_rows",
    "wigner",
    "wigner_rows",
    "wigner_p_axes",
    "husimi",
    "husimi_blocks",
    "husimi_stats",
    "gaussian_smooth",
    "fourier_profile",
    "a_norm",
    "smoothing_defect_a_norm",
    "pair",
    "momentum_second_moment",
    "husimi_pde_residual",
]

# running record of every Husimi field built in this process
husimi_stats = {"fields": 0, "blocks": 0, "min": math.inf}


@dataclass(frozen=True, eq=False)
class PhaseSpaceField:
    """Real field on a tensor lattice ``x_axes x p_axes``; values shape ``(*nx, *np)``."""

    x_axes: tuple
    p_axes: tuple
    values: np.ndarray
    kind: str
    eps: float
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("wigner", "husimi"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        shape = tuple(a.count for a in self.x_axes) + tuple(a.count for a in self.p_axes)
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} does not match axes {shape}")
        if self.kind == "husimi":
            vmin = float(self.values.min())
            husimi_stats["fields"] += 1
            husimi_stats["min"] = min(husimi_stats["min"], vmin)
            if vmin < -1e-12:
                raise ValueError(f"Husimi field has negative value {vmin:.3g}")

    @property
    def n(self) -> int:
        return len(self.x_axes)

    @property
    def dx(self) -> float:
        return float(np.prod([a.spacing for a in self.x_axes]))

    @property
    def dp(self) -> float:
        return float(np.prod([a.spacing for a in self.p_axes]))

    @property
    def x_points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*[a.points for a in self.x_axes], indexing="ij"), axis=-1)

    @property
    def p_points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*[a.points for a in self.p_axes], indexing="ij"), axis=-1)

    def total(self) -> float:
        return float(self.values.sum() * self.dx * self.dp)

    def x_marginal(self) -> np.ndarray:
        axes = tuple(range(self.n, 2 * self.n))
        return self.values.sum(axis=axes) * self.dp

    def p_marginal(self) -> np.ndarray:
        return self.values.sum(axis=tuple(range(self.n))) * self.dx

    def integrate(self, weights: np.ndarray) -> float:
        return float(np.sum(self.values * weights) * self.dx * self.dp)

    def slice_at_x(self, index) -> np.ndarray:
        return self.values[tuple(np.atleast_1d(index))]

    def slice_at_p(self, index) -> np.ndarray:
        return self.values[(Ellipsis,) + tuple(np.atleast_1d(index))]


# ---------------------------------------------------------------------------
# Wigner transform


def upsample(psi: Wavefunction) -> np.ndarray:
    """Trigonometric interpolant of ``psi`` on the lattice ``x_0 + i dx/2``, periodic, shape ``2N``.

    Even indices reproduce the original nodes exactly.
    """
    hat = np.fft.fftn(psi.values)
    for axis, N in enumerate(psi.grid.shape):
        hat = np.moveaxis(hat, axis, 0)
        big = np.zeros((2 * N,) + hat.shape[1:], dtype=complex)
        half = N // 2
        big[:half] = hat[:half]
        big[-half + 1:] = hat[half + 1:]
        # split the Nyquist mode symmetrically
        big[half] = 0.5 * hat[half]
        big[-half] = 0.5 * hat[half]
        hat = np.moveaxis(big, 0, axis)
    return np.fft.ifftn(hat) * (2 ** psi.grid.n)


def _offsets(M: int) -> np.ndarray:
    """Integer offsets in FFT order: 0, 1, ..., M/2-1, -M/2, ..., -1."""
    return np.fft.fftfreq(M, 1.0 / M).astype(int)


def padded(values: np.ndarray) -> np.ndarray:
    """Embed a ``2N``-per-axis fine array into zeros of size ``4N`` (offset ``N``)."""
    shape = tuple(2 * N for N in values.shape)
    pad = np.zeros(shape, dtype=values.dtype)
    pad[tuple(slice(N // 4, N // 4 + N // 2) for N in shape)] = values
    return pad


def fine_points(grid: SpatialGrid) -> np.ndarray:
    """Coordinates of the padded half-step lattice used by :func:`row_indices`, shape ``(*4N, n)``."""
    axes = [a.points[0] + (np.arange(4 * a.count) - a.count) * a.spacing / 2 for a in grid.axes]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def row_indices(grid: SpatialGrid) -> Iterator[tuple]:
    """Yield ``(row, plus, minus)``: index tuples of ``x_j + s_m`` and ``x_j - s_m`` in the padded lattice.

    ``s_m = m dx/2`` with ``m`` in FFT order over ``2N`` values per axis.  For ``n == 1``
    a single block covers all ``x`` (``row`` is ``slice(None)``); for ``n == 2`` there is
    one block per first-axis index, shaped ``(N1, 2N0, 2N1)``.
    """
    if grid.n == 1:
        N = grid.shape[0]
        j = N + 2 * np.arange(N)[:, None]
        m = _offsets(2 * N)[None, :]
        yield slice(None), (j + m,), (j - m,)
        return
    N0, N1 = grid.shape
    m0 = _offsets(2 * N0)[None, :, None]
    m1 = _offsets(2 * N1)[None, None, :]
    j1 = N1 + 2 * np.arange(N1)[:, None, None]
    for j0 in range(N0):
        a = N0 + 2 * j0
        yield j0, (a + m0, j1 + m1), (a - m0, j1 - m1)


def correlation_rows(psi: Wavefunction, fine: Optional[np.ndarray] = None) -> Iterator[tuple]:
    """Yield ``(row, C)`` with ``C[..., m] = psi(x + s_m) conj(psi(x - s_m))``, see :func:`row_indices`.

    ``psi`` is taken to vanish outside the box: a periodic wrap would pair ``x + s`` with
    its own image.
    """
    pad = padded(upsample(psi) if fine is None else fine)
    for row, plus, minus in row_indices(psi.grid):
        yield row, pad[plus] * np.conj(pad[minus])


def s_lattice(grid: SpatialGrid) -> np.ndarray:
    """Half-step offsets ``s_m`` matching :func:`correlation_rows`, shape ``(*2N, n)``."""
    axes = [_offsets(2 * a.count) * a.spacing / 2 for a in grid.axes]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def wigner_rows(psi: Wavefunction, p_refine: int = 1) -> Iterator[tuple]:
    """Yield ``(row, W, max_imag)`` blocks of the Wigner field, ``row`` as in :func:`row_indices`.

    ``p_refine=2`` keeps every bin of the lag FFT, halving the momentum spacing; the
    default keeps the even bins, which is the momentum grid of the wave function.
    """
    if p_refine not in (1, 2):
        raise ValueError("p_refine must be 1 or 2")
    grid, eps, n = psi.grid, psi.eps, psi.grid.n
    scale = float(np.prod(grid.dx / 2)) / (np.pi * eps) ** n
    fft_axes = tuple(range(-n, 0))
    sub = (Ellipsis,) + (slice(None, None, 3 - p_refine),) * n
    real = not np.any(np.imag(psi.values))
    for row, C in correlation_rows(psi):
        W = np.fft.fftshift(np.fft.fftn(C, axes=fft_axes)[sub] * scale, axes=fft_axes)
        max_imag = float(np.max(np.abs(W.imag)))
        W = W.real
        if real:
            # real psi: W is even in p; symmetrise away FFT roundoff
            mirrored = W
            for ax in fft_axes:
                c = W.shape[ax]
                mirrored = np.take(mirrored, (c - np.arange(c)) % c, axis=ax)
            W = 0.5 * (W + mirrored)
        yield row, W, max_imag


def wigner_p_axes(grid: SpatialGrid, eps: float, p_refine: int = 1) -> tuple:
    """Momentum axes of :func:`wigner_rows` blocks."""
    axes = grid.momentum_grid(eps).axes
    if p_refine == 2:
        axes = tuple(Axis(a.lo + a.spacing / 4, a.hi + a.spacing / 4, 2 * a.count) for a in axes)
    return axes


def wigner(psi: Wavefunction, tail_tol: Optional[float] = 1e-6, tail_layer: float = 0.05,
           p_refine: int = 1) -> PhaseSpaceField:
    """Wigner transform on the spatial grid times its momentum grid (see :func:`wigner_rows`)."""
    grid = psi.grid
    if tail_tol is not None:
        tail = boundary_mass(psi, tail_layer)
        if tail > tail_tol:
            raise TailOverflow(f"boundary mass {tail:.3g} exceeds {tail_tol:.3g}")
    p_axes = wigner_p_axes(grid, psi.eps, p_refine)
    out = np.empty(grid.shape + tuple(a.count for a in p_axes))
    max_imag = 0.0
    for row, W, im in wigner_rows(psi, p_refine):
        out[row] = W
        max_imag = max(max_imag, im)
    info = {"max_imag": max_imag, "norm2": psi.norm() ** 2}
    return PhaseSpaceField(grid.axes, p_axes, out, "wigner", psi.eps, info)


# ---------------------------------------------------------------------------
# Husimi transform


def _window_size(grid: SpatialGrid, eps: float, window) -> tuple:
    if window is None:
        return grid.shape
    if window == "auto":
        # window length >= 12 sqrt(eps): the Gaussian factor is below 2e-8 at the edges
        out = []
        for a in grid.axes:
            M = max(16, math.ceil(12 * np.sqrt(eps) / a.spacing))
            M = next_fast_len(M + M % 2)
            while M % 2:
                M = next_fast_len(M + 1)
            out.append(min(M, a.count))
        return tuple(out)
    return tuple(np.broadcast_to(np.asarray(window, dtype=int), (grid.n,)))


def husimi_blocks(psi: Wavefunction, window=None, x_stride=1, p_stride=1, skip_below: float = 0.0,
                  chunk: int = 256) -> tuple:
    """Husimi transform in blocks of centres.

    Returns ``(x_axes, p_axes, blocks)`` where ``blocks`` yields ``(flat_index, values)``;
    ``flat_index`` indexes the raveled centre lattice and ``values`` has shape
    ``(len(flat_index), *np)``.  Centres whose local mass is below ``skip_below`` are
    omitted (their Husimi values are below that mass times the peak kernel value).
    """
    grid, eps, n = psi.grid, psi.eps, psi.grid.n
    M = _window_size(grid, eps, window)
    xs = np.broadcast_to(np.asarray(x_stride, dtype=int), (n,))
    ps = np.broadcast_to(np.asarray(p_stride, dtype=int), (n,))
    centres = [np.arange(0, a.count, s) for a, s in zip(grid.axes, xs)]
    x_axes = tuple(Axis.from_points(a.points[c]) for a, c in zip(grid.axes, centres))
    p_axes = []
    for a, m, s in zip(grid.axes, M, ps):
        dp = 2 * np.pi * eps / (m * a.spacing)
        q = np.arange(-(m // 2), m - m // 2)[::s]
        p_axes.append(Axis.from_points(q * dp))
    p_axes = tuple(p_axes)
    offs = [np.arange(-(m // 2), m - m // 2) for m in M]
    u = np.stack(np.meshgrid(*[o * a.spacing for o, a in zip(offs, grid.axes)], indexing="ij"), axis=-1)
    gauss = (np.pi * eps) ** (-n / 4) * np.exp(-np.sum(u**2, axis=-1) / (2 * eps))
    dv = grid.cell_volume
    scale = dv**2 / (2 * np.pi * eps) ** n
    cidx = np.stack(np.meshgrid(*centres, indexing="ij"), axis=-1).reshape(-1, n)
    flat_all = np.arange(len(cidx))
    vals = psi.values
    if skip_below > 0:
        # local mass sum_u |psi(c+u) g(u)|^2 dv for every node by one periodic correlation
        kernel = np.zeros(grid.shape)
        kernel[np.ix_(*[o % a.count for o, a in zip(offs, grid.axes)])] = np.abs(gauss) ** 2 * dv
        local = np.fft.ifftn(np.fft.fftn(np.abs(vals) ** 2) * np.conj(np.fft.fftn(kernel))).real
        keep = local[tuple(cidx.T)] >= skip_below
        cidx, flat_all = cidx[keep], flat_all[keep]
    fft_axes = tuple(range(1, n + 1))
    psel = (slice(None),) + tuple(slice(None, None, s) for s in ps)

    def blocks():
        for start in range(0, len(cidx), chunk):
            c = cidx[start:start + chunk]
            if n == 1:
                idx = (c[:, 0:1] + offs[0][None, :]) % grid.shape[0]
                f = vals[idx] * gauss[None, :]
            else:
                i0 = (c[:, 0, None, None] + offs[0][None, :, None]) % grid.shape[0]
                i1 = (c[:, 1, None, None] + offs[1][None, None, :]) % grid.shape[1]
                f = vals[i0, i1] * gauss[None]
            flat = flat_all[start:start + len(c)]
            F = np.fft.fftshift(np.fft.fftn(f, axes=fft_axes), axes=fft_axes)
            block = (np.abs(F) ** 2 * scale)[psel]
            husimi_stats["blocks"] += 1
            husimi_stats["min"] = min(husimi_stats["min"], float(block.min()))
            yield flat, block

    return x_axes, p_axes, blocks()


def husimi(psi: Wavefunction, window=None, x_stride=1, p_stride=1, skip_below: float = 0.0
           ) -> PhaseSpaceField:
    """Husimi transform; by default on the full spatial grid times its momentum grid."""
    x_axes, p_axes, blocks = husimi_blocks(psi, window, x_stride, p_stride, skip_below)
    nx = tuple(a.count for a in x_axes)
    npp = tuple(a.count for a in p_axes)
    out = np.zeros((int(np.prod(nx)),) + npp)
    for flat, vals in blocks:
        out[flat] = vals
    return PhaseSpaceField(x_axes, p_axes, out.reshape(nx + npp), "husimi", psi.eps,
                           {"norm2": psi.norm() ** 2})


def gaussian_smooth(values: np.ndarray, axes: Sequence[Axis], variance_param: float,
                    first_axis: int = 0) -> np.ndarray:
    """Periodic convolution with ``G_s(z) = (pi s)^(-d/2) exp(-|z|^2/s)`` along the given axes.

    Uses the exact Fourier multiplier ``exp(-s |k|^2 / 4)``.
    """
    out = np.asarray(values, dtype=complex)
    fft_axes = tuple(range(first_axis, first_axis + len(axes)))
    hat = np.fft.fftn(out, axes=fft_axes)
    for i, a in enumerate(axes):
        k = 2 * np.pi * np.fft.fftfreq(a.count, a.spacing)
        shape = [1] * out.ndim
        shape[first_axis + i] = a.count
        hat = hat * np.exp(-variance_param * k**2 / 4).reshape(shape)
    res = np.fft.ifftn(hat, axes=fft_axes)
    return res.real if np.isrealobj(values) else res


# ---------------------------------------------------------------------------
# Test functions


def _smooth_step(rho):
    """C-infinity step: 1 for rho <= 0, 0 for rho >= 1, and its derivative."""
    rho = np.clip(rho, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(rho < 1, np.exp(-1.0 / np.where(rho < 1, 1 - rho, 1.0)), 0.0)
        b = np.where(rho > 0, np.exp(-1.0 / np.where(rho > 0, rho, 1.0)), 0.0)
        da = np.where(rho < 1, -a / np.where(rho < 1, (1 - rho) ** 2, 1.0), 0.0)
        db = np.where(rho > 0, b / np.where(rho > 0, rho**2, 1.0), 0.0)
        s = a / (a + b)
        ds = (da * b - a * db) / (a + b) ** 2
    return s, np.nan_to_num(ds)


@dataclass(frozen=True)
class Bump:
    """Radial C-infinity bump: ``amplitude`` on ``|z - center| <= plateau``, zero beyond ``radius``."""

    center: tuple
    radius: float
    plateau: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not 0 <= self.plateau < self.radius:
            raise ValueError("need 0 <= plateau < radius")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def sup(self) -> float:
        return abs(self.amplitude)

    def _r(self, z):
        d = np.asarray(z, dtype=float) - np.asarray(self.center)
        return d, np.sqrt(np.sum(d**2, axis=-1))

    def __call__(self, z) -> np.ndarray:
        _, r = self._r(z)
        s, _ = _smooth_step((r - self.plateau) / (self.radius - self.plateau))
        return self.amplitude * s

    def grad(self, z) -> np.ndarray:
        d, r = self._r(z)
        width = self.radius - self.plateau
        _, ds = _smooth_step((r - self.plateau) / width)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, d / np.where(r > 0, r, 1.0)[..., None], 0.0)
        return self.amplitude * (ds / width)[..., None] * unit


@dataclass(frozen=True)
class TestFunction:
    """Finite sum ``sum_i c_i a_i(x) b_i(p)`` of tensor products of bumps."""

    terms: tuple

    __test__ = False  # not a pytest class

    @classmethod
    def separable(cls, fx: Bump, fp: Bump, coef: float = 1.0) -> "TestFunction":
        return cls(((float(coef), fx, fp),))

    @property
    def is_separable(self) -> bool:
        return len(self.terms) == 1

    @property
    def n(self) -> int:
        return self.terms[0][1].dim

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return TestFunction(self.terms + other.terms)

    def scaled(self, lam: float) -> "TestFunction":
        return TestFunction(tuple((c * lam, a, b) for c, a, b in self.terms))

    def __call__(self, x, p) -> np.ndarray:
        return sum(c * a(x) * b(p) for c, a, b in self.terms)

    def grad_x(self, x, p) -> np.ndarray:
        return sum(c * a.grad(x) * b(p)[..., None] for c, a, b in self.terms)

    def grad_p(self, x, p) -> np.ndarray:
        return sum(c * a(x)[..., None] * b.grad(p) for c, a, b in self.terms)

    def on_field(self, field: PhaseSpaceField, which: str = "value") -> np.ndarray:
        """Evaluate on the tensor lattice of ``field``; ``which`` in value, grad_x, grad_p."""
        X, P = field.x_points, field.p_points
        n = field.n
        nx, npp = X.shape[:-1], P.shape[:-1]
        xs = (slice(None),) * n + (None,) * n
        ps = (None,) * n + (slice(None),) * n
        out = 0.0
        for c, a, b in self.terms:
            if which == "value":
                out = out + c * a(X)[xs] * b(P)[ps]
            elif which == "grad_x":
                out = out + c * a.grad(X)[xs + (slice(None),)] * b(P)[ps + (None,)]
            elif which == "grad_p":
                out = out + c * a(X)[xs + (None,)] * b.grad(P)[ps + (slice(None),)]
            else:
                raise ValueError(which)
        return np.broadcast_to(out, nx + npp + ((n,) if which != "value" else ())).copy()

    def x_supports(self) -> list:
        return [(np.asarray(a.center), a.radius) for _, a, _ in self.terms]

    def check_away_from(self, pot, tube: float = 0.0):
        """Raise :class:`SupportViolation` if an x-support meets the ``tube`` around S."""
        if not pot.has_singular:
            return
        for c, r in self.x_supports():
            if float(pot.dist_to_S(c)) - r <= tube:
                raise SupportViolation(
                    f"test function support (centre {c}, radius {r}) meets the singular tube {tube}")


@dataclass(frozen=True)
class TimeBump:
    """Smooth compactly supported time weight on ``(t0, t1)``."""

    t0: float
    t1: float

    def _u(self, t):
        return (2 * np.asarray(t, dtype=float) - (self.t0 + self.t1)) / (self.t1 - self.t0)

    def __call__(self, t):
        u = self._u(t)
        with np.errstate(divide="ignore", over="ignore"):
            inside = np.abs(u) < 1
            return np.where(inside, np.exp(1 - 1 / np.where(inside, 1 - u**2, 1.0)), 0.0)

    def derivative(self, t):
        u = self._u(t)
        du = 2 / (self.t1 - self.t0)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            inside = np.abs(u) < 1
            q = np.where(inside, 1 - u**2, 1.0)
            val = np.where(inside, np.exp(1 - 1 / q), 0.0)
            return np.where(inside, val * (-2 * u / q**2) * du, 0.0)


# ---------------------------------------------------------------------------
# A-norm machinery


def fourier_profile(b: Bump, resolution: Optional[int] = None, pad: Optional[int] = None) -> tuple:
    """Standard Fourier transform ``(F b)(y) = int exp(-i p.y) b(p) dp`` on a y-lattice.

    Returns ``(y_axes, values)`` with ``values`` in ascending y order.  The bump is
    sampled over its support box with ``resolution`` points per axis (default 512 in one
    dimension, 128 in two) and zero padded by ``pad`` (default 8, resp. 4), so the y-lattice reaches ``|y| = pi resolution / (2 radius)``.
    """
    n = b.dim
    resolution = resolution or (512 if n == 1 else 128)
    pad = pad or (8 if n == 1 else 4)
    h = 2 * b.radius / resolution
    M = resolution * pad
    c = np.asarray(b.center)
    offs = (np.arange(M) - M // 2) * h
    axes_p = [ci + offs for ci in c]
    P = np.stack(np.meshgrid(*axes_p, indexing="ij"), axis=-1)
    vals = b(P)
    F = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(vals))) * h**n
    ky = 2 * np.pi * np.fft.fftshift(np.fft.fftfreq(M, h))
    Y = np.stack(np.meshgrid(*([ky] * n), indexing="ij"), axis=-1)
    # the lattice is centred at c, not at the origin
    F = F * np.exp(-1j * (Y @ c))
    return tuple(Axis.from_points(ky) for _ in range(n)), F


def _y_integral(values: np.ndarray, y_axes, weight_power: int = 0) -> float:
    Y = np.stack(np.meshgrid(*[a.points for a in y_axes], indexing="ij"), axis=-1)
    w = np.sqrt(np.sum(Y**2, axis=-1)) ** weight_power if weight_power else 1.0
    return float(np.sum(np.abs(values) * w) * np.prod([a.spacing for a in y_axes]))


def a_norm(phi: TestFunction, x_samples: Optional[np.ndarray] = None, y_weight_power: int = 0,
           allow_sums: bool = False) -> float:
    """``||phi||_A = int sup_x |F_p phi|(x, y) dy``.

    For a tensor product this factorises as ``sup|a| * ||F b||_1``.  Finite sums are
    evaluated by a sup over ``x_samples`` when ``allow_sums`` is set; otherwise they
    raise :class:`NonSeparable`.  ``y_weight_power = 1`` gives the moment
    ``int |y| sup_x |F_p phi| dy`` used in the error-term bounds.
    """
    if phi.is_separable:
        c, a, b = phi.terms[0]
        y_axes, F = fourier_profile(b)
        return abs(c) * a.sup * _y_integral(F, y_axes, y_weight_power)
    if not allow_sums:
        raise NonSeparable("a_norm supports tensor-product test functions only")
    if x_samples is None:
        raise ValueError("x_samples are required for sums of tensor products")
    X = np.asarray(x_samples)
    lo = min(np.min(np.asarray(b.center) - b.radius) for _, _, b in phi.terms)
    hi = max(np.max(np.asarray(b.center) + b.radius) for _, _, b in phi.terms)
    union = Bump(((lo + hi) / 2,) * phi.n, (hi - lo) / 2 * np.sqrt(phi.n))
    y_axes, _ = fourier_profile(union)
    # common y lattice for all terms
    total = 0.0
    for c, a, b in phi.terms:
        _, F = _fourier_on(b, y_axes)
        total = total + c * a(X).reshape(-1, 1) * F.reshape(1, -1)
    sup = np.max(np.abs(total), axis=0).reshape(F.shape)
    return _y_integral(sup, y_axes, y_weight_power)


def _fourier_on(b: Bump, y_axes, resolution: int = 512) -> tuple:
    """``F b`` evaluated on a given y-lattice by direct quadrature over the support box."""
    n = b.dim
    h = 2 * b.radius / resolution
    c = np.asarray(b.center)
    offs = (np.arange(resolution) - resolution / 2 + 0.5) * h
    P = np.stack(np.meshgrid(*[ci + offs for ci in c], indexing="ij"), axis=-1).reshape(-1, n)
    vals = b(P) * h**n
    Y = np.stack(np.meshgrid(*[a.points for a in y_axes], indexing="ij"), axis=-1)
    shape = Y.shape[:-1]
    Y = Y.reshape(-1, n)
    F = np.exp(-1j * Y @ P.T) @ vals
    return y_axes, F.reshape(shape)


def smoothing_defect_a_norm(phi: TestFunction, eps: float, x_axes: Sequence[Axis]) -> float:
    """``||phi - phi * G_eps^(2n)||_A`` for a tensor product, sup over the given x-lattice."""
    if not phi.is_separable:
        raise NonSeparable("smoothing defect is implemented for tensor products")
    c, a, b = phi.terms[0]
    X = np.stack(np.meshgrid(*[ax.points for ax in x_axes], indexing="ij"), axis=-1)
    ax = a(X)
    ax_s = gaussian_smooth(ax, x_axes, eps)
    y_axes, F = fourier_profile(b)
    Y = np.stack(np.meshgrid(*[ya.points for ya in y_axes], indexing="ij"), axis=-1)
    damp = np.exp(-eps * np.sum(Y**2, axis=-1) / 4)
    # sup over x of |ax F - ax_s F damp| = |F| sup_x |ax - ax_s damp|
    axf, axsf = ax.reshape(-1, 1), ax_s.reshape(-1, 1)
    flatF, flatD = F.reshape(1, -1), damp.reshape(1, -1)
    sup = np.zeros(flatF.shape[1])
    for i in range(0, axf.shape[0], 256):
        blk = np.abs(axf[i:i + 256] - axsf[i:i + 256] * flatD)
        sup = np.maximum(sup, blk.max(axis=0))
    return abs(c) * _y_integral(sup.reshape(F.shape) * np.abs(F), y_axes)


@dataclass(frozen=True)
class PairingResult:
    value: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - abs(self.value)


def pair(field_or_psi, phi: TestFunction, check: bool = True) -> PairingResult:
    """``int phi W dx dp`` together with the bound ``(2 pi)^-n ||phi||_A ||psi||^2``."""
    if isinstance(field_or_psi, Wavefunction):
        field = wigner(field_or_psi)
    else:
        field = field_or_psi
    value = field.integrate(phi.on_field(field))
    norm2 = field.info.get("norm2", field.total())
    bound = a_norm(phi) * norm2 / (2 * np.pi) ** field.n
    if check and abs(value) > bound * (1 + 1e-9):
        raise BoundViolation(f"|pairing| {abs(value):.6g} exceeds bound {bound:.6g}")
    return PairingResult(value, bound)


def momentum_second_moment(psi: Wavefunction) -> tuple:
    """``(int |p|^2 |F_eps psi|^2 (2 pi eps)^-n dp, int |eps grad psi|^2 dx)``."""
    amp = eps_fourier(psi)
    P = amp.mgrid.points
    left = float(np.sum(np.sum(P**2, axis=-1) * amp.density()) * amp.mgrid.cell_volume)
    grad = np.fft.ifftn  # spectral derivative in position space
    hat = np.fft.fftn(psi.values)
    ks = np.meshgrid(*psi.grid.wavenumbers(), indexing="ij")
    right = 0.0
    for k in ks:
        d = grad(1j * k * hat)
        right += float(np.sum(np.abs(psi.eps * d) ** 2) * psi.grid.cell_volume)
    return left, right


# ---------------------------------------------------------------------------
# Husimi PDE residual


@dataclass(frozen=True)
class ResidualReport:
    residual: float
    time_term: float
    transport_term: float
    weight_integrals: tuple  # (int phi W~_t, int <b, grad phi> W~_t) per sample
    sqrt_eps_term: Optional[float] = None


def husimi_pde_residual(times: Sequence[float], states: Sequence[Wavefunction], pot,
                        phi: TestFunction, weight: TimeBump, tube: float = 0.0,
                        husimi_kwargs: Optional[dict] = None) -> ResidualReport:
    """``| int_0^T [w'(t) int phi dW~_t + w(t) int <b, grad phi> dW~_t] dt |``, ``b = (p, -grad U)``.

    Time integrals use Simpson's rule on the sampled trajectory.  ``sqrt_eps_term`` is the
    smoothing commutator ``(eps/2) int w(t) int div_x grad_p phi dW~_t dt``: Gaussian
    smoothing does not commute with ``p . grad_x``, so for free motion the residual
    tends to this term rather than to zero (for quadratic U the two commutators cancel).
    """
    phi.check_away_from(pot, tube)
    husimi_kwargs = husimi_kwargs or {}
    f1, f2, f3 = [], [], []
    for psi in states:
        H = husimi(psi, **husimi_kwargs)
        X, P = H.x_points, H.p_points
        n = H.n
        xs = (slice(None),) * n + (None,) * n + (slice(None),)
        ps = (None,) * n + (slice(None),) * n + (slice(None),)
        gradU = _safe_grad(pot, X)
        b_dot = np.sum(P[ps] * phi.on_field(H, "grad_x"), axis=-1) \
            - np.sum(gradU[xs] * phi.on_field(H, "grad_p"), axis=-1)
        f1.append(H.integrate(phi.on_field(H)))
        f2.append(H.integrate(b_dot))
        f3.append(H.integrate(_mixed_divergence(phi, X, P)))
    t = np.asarray(times, dtype=float)
    f1, f2 = np.asarray(f1), np.asarray(f2)
    time_term = float(simpson(weight.derivative(t) * f1, x=t))
    transport = float(simpson(weight(t) * f2, x=t))
    commutator = float(simpson(weight(t) * np.asarray(f3), x=t)) * states[0].eps / 2
    return ResidualReport(abs(time_term + transport), time_term, transport, (f1, f2), commutator)


def _mixed_divergence(phi: TestFunction, X: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``sum_i d^2 phi / dx_i dp_i`` on the tensor lattice ``X x P``."""
    n = X.shape[-1]
    xs = (slice(None),) * n + (None,) * n
    ps = (None,) * n + (slice(None),) * n
    return sum(c * np.sum(a.grad(X)[xs] * b.grad(P)[ps], axis=-1) for c, a, b in phi.terms)


def _safe_grad(pot, X):
    """Gradient of U on a lattice; nodes on the singular set get a zero gradient.

    Callers guarantee the test function vanishes near S, so those nodes carry no weight.
    """
    if not pot.has_singular:
        return pot.evaluate_grad(X)
    ok = pot.dist_to_S(X) > 1e-12
    out = np.zeros(X.shape)
    out[ok] = pot.evaluate_grad(X[ok])
    return out
