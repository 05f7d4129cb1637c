"""Error functionals of the Wigner equation paired with test functions.

With ``s = eps y / 2`` the remainder ``I_eps(V, psi)`` paired against a tensor product
``a(x) b(p)`` becomes

    -i (2 pi)^-n  int dx a(x) int dy [(V(x+s) - V(x-s))/eps] psi(x+s) conj(psi(x-s)) (F b)(y)

which is evaluated on the same half-step lattice as the Wigner transform: ``s_m = m dx/2``,
``y_m = 2 s_m / eps``.  On that lattice ``(F b)(y_m)`` is exactly a length-``2N`` DFT of
``b`` sampled at momenta ``pi eps k / L``, so the Wigner quadrature and the error
quadratures are the same sum rearranged.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import TailOverflow
from .grid import Axis, SpatialGrid, Wavefunction, boundary_mass
from .phase_space import (
    TestFunction,
    a_norm,
    fourier_profile,
    fine_points,
    gaussian_smooth,
    padded,
    s_lattice,
    upsample,
    wigner_p_axes,
    wigner_rows,
)
from .potential import Potential, bounded_part

__all__ = [
    "ErrorPairing",
    "YLattice",
    "pair_I_eps",
    "pair_E_eps",
    "transport_from_wigner",
    "bound_lipschitz",
    "bound_coulomb",
    "coulomb_constant",
    "coulomb_moment",
    "coulomb_discrepancy",
    "write_error_csv",
]

CSV_COLUMNS = ["eps", "pairing", "transport", "discrepancy", "bound", "region_outer", "region_inner"]


@dataclass(frozen=True)
class ErrorPairing:
    eps: float
    pairing: float
    transport: float
    discrepancy: float
    bound: float
    region_outer: float = float("nan")
    region_inner: float = float("nan")
    imag_residue: float = 0.0

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass(frozen=True)
class YLattice:
    """The dual lattice ``y_m = 2 s_m / eps`` in FFT order, shape ``(*2N, n)``."""

    y: np.ndarray
    dy: float

    @classmethod
    def of(cls, grid: SpatialGrid, eps: float) -> "YLattice":
        y = 2 * s_lattice(grid) / eps
        return cls(y, float(np.prod(grid.dx / eps)))


def fourier_on_lattice(b, grid: SpatialGrid, eps: float) -> np.ndarray:
    """``(F b)(y_m)`` for a momentum profile ``b``; exact DFT of ``b`` on the momenta ``pi eps k / L``."""
    axes = []
    for a in grid.axes:
        N = a.count
        axes.append(np.pi * eps * np.fft.fftfreq(2 * N, 1.0 / (2 * N)) / a.length)
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    dp = float(np.prod([np.pi * eps / a.length for a in grid.axes]))
    return np.fft.fftn(b(P)) * dp


def _x_profile(a, grid: SpatialGrid, eps: float, smooth: bool) -> np.ndarray:
    vals = a(grid.points)
    return gaussian_smooth(vals, grid.axes, eps) if smooth else vals


def _safe_grad_grid(pot: Potential, pts: np.ndarray) -> np.ndarray:
    if not pot.has_singular:
        return pot.evaluate_grad(pts)
    out = np.zeros(pts.shape)
    ok = pot.dist_to_S(pts) > 1e-12
    out[ok] = pot.evaluate_grad(pts[ok])
    return out


def _check(psi: Wavefunction, pot: Potential, phi: TestFunction, tube: float, tail_tol: Optional[float]):
    if pot.has_singular:
        phi.check_away_from(pot, tube)
    if tail_tol is not None:
        tail = boundary_mass(psi)
        if tail > tail_tol:
            raise TailOverflow(f"boundary mass {tail:.3g} exceeds {tail_tol:.3g}")


def _contract(psi: Wavefunction, pot: Potential, phi: TestFunction, smooth: bool, mode: str,
              inner_radius: Optional[float] = None) -> tuple:
    """Core lattice sums.

    ``mode`` is ``"I"`` (difference quotient), ``"E"`` (bracket minus gradient term) or
    ``"T"`` (transport term ``int <grad V, grad_p phi> W``, smoothed to the Husimi
    transform when ``smooth``).  Returns ``(total, inner, outer)`` where the split is at
    ``|y| <= inner_radius`` (``None`` puts everything in ``inner``).

    The y-sums are matrix-vector products of the correlation rows with the weight
    vectors ``F b`` and ``y_k F b`` restricted to each region.
    """
    grid, eps, n = psi.grid, psi.eps, psi.grid.n
    lat = YLattice.of(grid, eps)
    pad = padded(upsample(psi))
    damp = np.exp(-eps * np.sum(lat.y**2, axis=-1) / 4) if smooth else 1.0
    inner = (np.sqrt(np.sum(lat.y**2, axis=-1)) <= inner_radius) if inner_radius is not None \
        else np.ones(lat.y.shape[:-1], dtype=bool)
    lag_axes = tuple(range(n))
    # weights are permuted once from FFT order to the ascending lag order of _lag_rows
    inner = np.fft.fftshift(inner, axes=lag_axes)
    regions = [inner.ravel()] + ([~inner.ravel()] if inner_radius is not None else [])
    ys = np.fft.fftshift(lat.y, axes=lag_axes).reshape(-1, n)
    pts = grid.points
    if mode in ("I", "E"):
        Upad = pot.evaluate(fine_points(grid))
    if mode in ("E", "T"):
        gU = _safe_grad_grid(pot, pts)
    scale = grid.cell_volume * lat.dy / (2 * np.pi) ** n
    totals = np.zeros(len(regions), dtype=complex)
    for c, a, b in phi.terms:
        Fb = np.fft.fftshift(fourier_on_lattice(b, grid, eps) * damp, axes=lag_axes).ravel()
        # columns: region r, then (plain, y_1, ..., y_n)
        cols = []
        for mask in regions:
            w = np.where(mask, Fb, 0)
            cols.append(w)
            if mode != "I":
                cols.extend(w * ys[:, k] for k in range(n))
        V = np.stack(cols, axis=1)
        stride = 1 if mode == "I" else n + 1
        if mode == "T":
            wx = gU * a(pts)[..., None]
            if smooth:
                wx = np.stack([gaussian_smooth(wx[..., k], grid.axes, eps) for k in range(n)], axis=-1)
        else:
            ax = _x_profile(a, grid, eps, smooth)
        u_rows = _lag_rows(Upad, grid) if mode != "T" else None
        for row, plus, minus in _lag_rows(pad, grid):
            C = (plus * np.conj(minus)).reshape(plus.shape[0], -1)
            if mode == "T":
                S = C @ V  # (rows, regions * (n + 1))
                w = wx[row].reshape(-1, n)
                for r in range(len(regions)):
                    Sy = S[:, r * stride + 1:(r + 1) * stride]
                    totals[r] += c * 1j * np.sum(w * Sy)
                continue
            _, u_plus, u_minus = next(u_rows)
            D = ((u_plus - u_minus) / eps).reshape(C.shape)
            S = (D * C) @ V[:, ::stride]
            if mode == "E":
                Sg = C @ V
                g = gU[row].reshape(-1, n)
            axr = ax[row].reshape(-1)
            for r in range(len(regions)):
                val = S[:, r]
                if mode == "E":
                    val = val - np.sum(g * Sg[:, r * stride + 1:(r + 1) * stride], axis=1)
                totals[r] += c * -1j * np.sum(axr * val)
    totals = totals * scale
    tot_in = totals[0]
    tot_out = totals[1] if len(totals) > 1 else 0.0 + 0.0j
    return tot_in + tot_out, tot_in, tot_out


def _lag_rows(arr: np.ndarray, grid: SpatialGrid):
    """Yield ``(row, f(x + s_m), f(x - s_m))`` from a padded half-step array as strided views.

    Lags run in ascending order ``m = -N .. N-1`` per axis; shapes are ``(N, 2N)`` for
    ``n == 1`` and ``(N1, 2N0, 2N1)`` per first-axis index for ``n == 2``.
    """
    win = np.lib.stride_tricks.sliding_window_view
    if grid.n == 1:
        N = grid.shape[0]
        w = win(arr, 2 * N)
        yield slice(None), w[0:2 * N:2], w[1:2 * N + 1:2, ::-1]
        return
    N0, N1 = grid.shape
    for j0 in range(N0):
        p0 = arr[2 * j0:2 * j0 + 2 * N0]
        m0 = arr[2 * j0 + 1:2 * j0 + 2 * N0 + 1][::-1]
        plus = win(p0, 2 * N1, axis=1)[:, 0:2 * N1:2].transpose(1, 0, 2)
        minus = win(m0, 2 * N1, axis=1)[:, 1:2 * N1 + 1:2, ::-1].transpose(1, 0, 2)
        yield j0, plus, minus


def coulomb_constant(pot: Potential) -> float:
    """``C_* = sqrt(2) (2 pi)^-n sum_pairs 1/(Z_i Z_j)``."""
    if not pot.has_singular:
        return 0.0
    return float(np.sqrt(2) * np.sum(1.0 / pot.pair_products()) / (2 * np.pi) ** pot.n)


def coulomb_moment(psi: Wavefunction, pot: Potential, refine: int = 1) -> float:
    """``int U_s^2 |psi|^2 dx`` on the grid, or on the spectrally refined half-step grid (``refine=2``)."""
    if not pot.has_singular:
        return 0.0
    if refine not in (1, 2):
        raise ValueError("refine must be 1 or 2")
    vals, grid = psi.values, psi.grid
    if refine == 2:
        # half-step nodes stay off the diagonal on the offset grids used for pairs
        vals = upsample(psi)
        grid = SpatialGrid(tuple(Axis(a.lo + a.spacing / 4, a.hi + a.spacing / 4, 2 * a.count)
                                 for a in grid.axes))
    us = pot.singular_value(grid.points)
    return float(np.sum(us**2 * np.abs(vals) ** 2) * grid.cell_volume)


def bound_lipschitz(pot: Potential, phi: TestFunction, lipschitz: Optional[float] = None) -> float:
    """``(2 pi)^-n ||grad V||_inf int |y| sup_x |F_p phi| dy``; ``inf`` for unbounded gradients."""
    lip = pot.bounded.lipschitz if lipschitz is None else lipschitz
    if lip is None:
        return float("inf")
    return float(lip * a_norm(phi, y_weight_power=1) / (2 * np.pi) ** phi.n)


def bound_coulomb(psi: Wavefunction, pot: Potential, phi: TestFunction, moment: Optional[float] = None
                  ) -> float:
    """``C_* int |y| sup_x |F_p phi| dy * int U_s^2 |psi|^2 dx``."""
    m = coulomb_moment(psi, pot) if moment is None else moment
    return float(coulomb_constant(pot) * a_norm(phi, y_weight_power=1) * m)


def _bound(psi, pot, phi):
    b = bound_lipschitz(pot, phi) if not pot.bounded.name == "zero" else 0.0
    if pot.has_singular:
        b += bound_coulomb(psi, pot, phi)
    return b


def pair_I_eps(pot: Potential, psi: Wavefunction, phi: TestFunction, smooth_test: bool = True,
               tube: float = 0.0, tail_tol: Optional[float] = 1e-6) -> ErrorPairing:
    """Pairing of ``I_eps(V, psi)`` with ``phi`` and the companion transport term.

    With ``smooth_test`` (default) the pairing uses ``phi * G_eps^(2n)`` and the transport
    term ``int <grad V, grad_p phi> W~`` is taken against the same smoothing, so the
    discrepancy vanishes identically for affine ``V``.  Without it, ``phi`` enters
    unsmoothed and the transport term uses the Wigner transform, in which case the
    discrepancy equals the ``E_eps`` pairing.
    """
    _check(psi, pot, phi, tube, tail_tol)
    val, _, _ = _contract(psi, pot, phi, smooth_test, "I")
    tr, _, _ = _contract(psi, pot, phi, smooth_test, "T")
    return ErrorPairing(psi.eps, float(val.real), float(tr.real), float((val + tr).real),
                        _bound(psi, pot, phi), imag_residue=float(abs(val.imag) + abs(tr.imag)))


def pair_E_eps(pot: Potential, psi: Wavefunction, phi: TestFunction, tube: float = 0.0,
               tail_tol: Optional[float] = 1e-6) -> float:
    """``int E_eps(V, psi) phi dx dp`` from the bracket with the gradient term removed."""
    _check(psi, pot, phi, tube, tail_tol)
    val, _, _ = _contract(psi, pot, phi, False, "E")
    return float(val.real)


def transport_from_wigner(pot: Potential, psi: Wavefunction, phi: TestFunction) -> float:
    """``int <grad V, grad_p phi> W dx dp`` by quadrature of the Wigner field.

    The field is taken at twice the momentum resolution of the wave function, which
    is the resolution of the y-lattice sums, and is consumed row by row.
    """
    grid, n = psi.grid, psi.grid.n
    X = grid.points
    P = np.stack(np.meshgrid(*[a.points for a in wigner_p_axes(grid, psi.eps, 2)], indexing="ij"), axis=-1)
    gV = _safe_grad_grid(pot, X)
    total = 0.0
    for c, a, b in phi.terms:
        gb = b.grad(P)
        # (x, p) weight of one row: <grad V(x), grad b(p)> a(x)
        for row, W, _ in wigner_rows(psi, 2):
            wx = (gV[row] * a(X[row])[..., None]).reshape(-1, n)
            proj = np.tensordot(W.reshape(wx.shape[0], -1), gb.reshape(-1, n), axes=(1, 0))
            total += c * float(np.sum(wx * proj))
    cell = grid.cell_volume * float(np.prod([ax.spacing for ax in wigner_p_axes(grid, psi.eps, 2)]))
    return total * cell


def coulomb_discrepancy(psi: Wavefunction, pot: Potential, phi: TestFunction, tube: float = 0.0,
                        tail_tol: Optional[float] = 1e-6) -> ErrorPairing:
    """``|int I_eps(U_s) (phi * G_eps) + int <grad U_s, grad_p phi> W~|`` with the y-lattice split at ``sqrt(eps)|y| = 1``.

    ``region_inner`` and ``region_outer`` are the two parts of the ``I_eps`` pairing;
    ``bound`` is the a-priori bound restricted to the outer region.
    """
    _check(psi, pot, phi, tube, tail_tol)
    if not any(c for c, _, _ in phi.terms):
        return ErrorPairing(psi.eps, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    eps = psi.eps
    sing = Potential(pot.n, bounded_part("zero", pot.n), pot.charges, pot.pairs,
                     pot.singular_enabled, pot.soften)
    r = 1 / np.sqrt(eps)
    val, inner, outer = _contract(psi, sing, phi, True, "I", inner_radius=r)
    tr, _, _ = _contract(psi, sing, phi, True, "T")
    # outer-region bound: C_* int_{|y| > r} |y| sup|F_p phi| dy * moment
    outer_bound = 0.0
    for c, a, b in phi.terms:
        y_axes, F = fourier_profile(b)
        Y = np.stack(np.meshgrid(*[ya.points for ya in y_axes], indexing="ij"), axis=-1)
        ny = np.sqrt(np.sum(Y**2, axis=-1))
        dyv = np.prod([ya.spacing for ya in y_axes])
        outer_bound += abs(c) * a.sup * float(np.sum(np.where(ny > r, ny * np.abs(F), 0)) * dyv)
    outer_bound *= coulomb_constant(sing) * coulomb_moment(psi, sing)
    return ErrorPairing(eps, float(val.real), float(tr.real), float(abs((val + tr).real)), outer_bound,
                        float(outer.real), float(inner.real), float(abs(val.imag) + abs(tr.imag)))


def write_error_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([repr(float(v)) for v in r.row()])
