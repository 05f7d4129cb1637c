"""Random families of wave packets, averaged diagnostics and the convergence experiment.

A family draws labels ``w = (x0, p0)`` from a law ``P = rho L^2n`` and builds the
packets ``eps^(-n alpha/2) phi0((x - x0)/eps^alpha) exp(i x.p0/eps)``.  The experiment
propagates each packet, tracks its Husimi transform through the integrals of a fixed
test dictionary, pushes the limit measure ``i(w)`` along the classical flow, and
reports

    D(eps) = mean_w  max_t  d_P(Husimi(psi_{t,w}), mu(t, i(w))).
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.stats import truncnorm

from .classical import FlowConfig, ParticleEnsemble, dist_integrability, flow_map, push_forward
from .errors import NyquistViolation, OutOfBox, TailOverflow
from .grid import Axis, PolyBump, SpatialGrid, Wavefunction, wave_packet
from .measures import TestDictionary, d_P
from .phase_space import gaussian_smooth, husimi_blocks
from .potential import Potential
from .propagator import PropagatorConfig, propagate

__all__ = [
    "RandomFamily",
    "FamilyMember",
    "GridRule",
    "ExperimentSettings",
    "ConvergenceReport",
    "sample_family",
    "limit_measure",
    "husimi_at",
    "operator_inequality_diagnostics",
    "no_concentration_diagnostics",
    "tightness_diagnostics",
    "fit_tail_constant",
    "quantum_dist_integrability",
    "run_convergence_experiment",
    "ladder_ratio",
    "uniformly_bounded",
]

LAWS = ("uniform_box", "truncated_gaussian", "dirac")


@dataclass(frozen=True)
class RandomFamily:
    """Law of the labels and packet parameters.

    ``center`` and ``scale`` have length ``2n`` (positions first).  For ``uniform_box``
    ``scale`` holds half-widths; for ``truncated_gaussian`` standard deviations, cut at
    ``truncation`` deviations; ``dirac`` places every label at ``center``.
    """

    n: int
    center: tuple
    scale: tuple
    law: str = "uniform_box"
    truncation: float = 2.0
    alpha: float = 0.5
    envelope_radius: float = 2.5
    envelope_power: int = 6
    n_w: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "scale", tuple(float(c) for c in self.scale))
        if self.law not in LAWS:
            raise ValueError(f"unknown law {self.law!r}; choose from {LAWS}")
        if len(self.center) != 2 * self.n or len(self.scale) != 2 * self.n:
            raise ValueError("center and scale need 2n entries")
        if self.law != "dirac" and any(s <= 0 for s in self.scale):
            raise ValueError("scales must be positive")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.n_w < 1:
            raise ValueError("n_w must be positive")

    @property
    def envelope(self) -> PolyBump:
        return PolyBump(self.envelope_radius, self.envelope_power)

    def labels(self) -> np.ndarray:
        """``(n_w, 2n)`` labels; deterministic in ``seed``."""
        rng = np.random.default_rng(self.seed)
        c, s = np.asarray(self.center), np.asarray(self.scale)
        if self.law == "dirac":
            return np.tile(c, (self.n_w, 1))
        if self.law == "uniform_box":
            return c + s * rng.uniform(-1, 1, (self.n_w, 2 * self.n))
        z = truncnorm.rvs(-self.truncation, self.truncation, size=(self.n_w, 2 * self.n), random_state=rng)
        return c + s * z

    def density_sup(self) -> float:
        """``sup rho``; infinite for the Dirac law."""
        s = np.asarray(self.scale)
        if self.law == "dirac":
            return math.inf
        if self.law == "uniform_box":
            return float(1 / np.prod(2 * s))
        mass = math.erf(self.truncation / math.sqrt(2))
        return float(np.prod(1 / (math.sqrt(2 * math.pi) * s * mass)))

    def support_reach(self) -> np.ndarray:
        """Per-coordinate bound on ``|w - center|``."""
        s = np.asarray(self.scale)
        if self.law == "dirac":
            return np.zeros_like(s)
        return s if self.law == "uniform_box" else self.truncation * s


@dataclass
class FamilyMember:
    index: int
    w: np.ndarray
    psi: Wavefunction
    limit: ParticleEnsemble


def _quantiles(x: np.ndarray, dens: np.ndarray, count: int) -> np.ndarray:
    """Deterministic stratified inverse-transform samples of a 1-D density."""
    cdf = cumulative_trapezoid(dens, x, initial=0.0)
    cdf /= cdf[-1]
    u = (np.arange(count) + 0.5) / count
    return np.interp(u, cdf, x)


def _envelope_profile(family: RandomFamily, count: int = 8192) -> tuple:
    R = family.envelope_radius
    u = np.linspace(-R, R, count)
    f = family.envelope(u[:, None])
    f = f / np.sqrt(trapezoid(f**2, u))
    return u, f


def limit_measure(family: RandomFamily, w: np.ndarray, cloud: int = 256) -> ParticleEnsemble:
    """``i(w)``: a point mass for ``0 < alpha < 1``; a momentum (resp. position) cloud for alpha 1 (resp. 0)."""
    n = family.n
    x0, p0 = np.asarray(w[:n]), np.asarray(w[n:])
    if 0 < family.alpha < 1:
        return ParticleEnsemble.dirac(x0, p0)
    if n != 1:
        raise NotImplementedError("limit clouds are implemented for n = 1")
    u, f = _envelope_profile(family)
    if family.alpha == 0:
        xs = x0[0] + _quantiles(u, f**2, cloud)
        return ParticleEnsemble.uniform(xs[:, None], np.full((cloud, 1), p0[0]))
    # (2 pi)^-1 |F phi0|^2 (p - p0)
    h = u[1] - u[0]
    M = 8 * len(u)
    F = np.fft.fftshift(np.fft.fft(f, M)) * h
    k = 2 * np.pi * np.fft.fftshift(np.fft.fftfreq(M, h))
    ps = p0[0] + _quantiles(k, np.abs(F) ** 2 / (2 * np.pi), cloud)
    return ParticleEnsemble.uniform(np.full((cloud, 1), x0[0]), ps[:, None])


def sample_family(family: RandomFamily, grid: SpatialGrid, eps: float, indices: Optional[Sequence[int]] = None
                  ) -> list:
    """Packets and limit measures for the family's labels; raises :class:`OutOfBox` if a packet leaks."""
    labels = family.labels()
    idx = range(family.n_w) if indices is None else indices
    out = []
    for i in idx:
        w = labels[i]
        psi = wave_packet(grid, eps, family.alpha, w[:family.n], w[family.n:], family.envelope)
        out.append(FamilyMember(i, w, psi, limit_measure(family, w)))
    return out


# ---------------------------------------------------------------------------
# pointwise Husimi and averaged diagnostics


def husimi_at(psi: Wavefunction, ys: np.ndarray, ps: np.ndarray) -> np.ndarray:
    """Husimi transform on the tensor lattice ``ys x ps`` (arrays ``(a, n)`` and ``(b, n)``) by direct overlaps."""
    grid, eps, n = psi.grid, psi.eps, psi.grid.n
    X = grid.points.reshape(-1, n)
    vals = psi.values.reshape(-1)
    dv = grid.cell_volume
    ys, ps = np.atleast_2d(ys), np.atleast_2d(ps)
    phase = np.exp(-1j * (X @ ps.T) / eps)  # (Nx, b)
    out = np.empty((len(ys), len(ps)))
    norm = (np.pi * eps) ** (-n / 4)
    for i, y in enumerate(ys):
        g = norm * np.exp(-np.sum((X - y) ** 2, axis=-1) / (2 * eps))
        ov = (vals * g) @ phase * dv
        out[i] = np.abs(ov) ** 2 / (2 * np.pi * eps) ** n
    return out


def _probe_lattice(family: RandomFamily, count: int, pad: float) -> tuple:
    n = family.n
    c = np.asarray(family.center)
    r = family.support_reach() + pad
    axes = [np.linspace(c[i] - r[i], c[i] + r[i], count) for i in range(2 * n)]
    ys = np.stack(np.meshgrid(*axes[:n], indexing="ij"), axis=-1).reshape(-1, n)
    ps = np.stack(np.meshgrid(*axes[n:], indexing="ij"), axis=-1).reshape(-1, n)
    return ys, ps


@dataclass
class OperatorReport:
    eps: float
    lambdas: tuple
    smoothed_density_sup: tuple  # (a) per lambda
    husimi_sup: float  # (b)
    implied_C: float
    probe_far_value: float
    n_w: int


def operator_inequality_diagnostics(members: Sequence[FamilyMember], eps: float,
                                    lambdas: Sequence[float] = (0.5, 1.0, 2.0),
                                    probes: Optional[tuple] = None, far_probe: Optional[tuple] = None
                                    ) -> OperatorReport:
    """Monte-Carlo averages over ``w`` of ``|psi * G_{2 lambda eps^2}|^2(y)`` and of the Husimi transform.

    ``probes`` is ``(ys, ps)``; ``far_probe`` a single phase-space point expected to be
    outside every packet.
    """
    if probes is None:
        raise ValueError("probe lattice required")
    ys, ps = probes
    grid = members[0].psi.grid
    n = grid.n
    # nearest grid nodes to the position probes for the smoothed densities
    node_idx = tuple(
        np.clip(np.round((ys[:, i] - grid.axes[i].points[0]) / grid.axes[i].spacing).astype(int), 0,
                grid.axes[i].count - 1) for i in range(n))
    acc_a = np.zeros((len(lambdas), len(ys)))
    acc_b = np.zeros((len(ys), len(ps)))
    far = 0.0
    for m in members:
        for j, lam in enumerate(lambdas):
            sm = gaussian_smooth(m.psi.values, grid.axes, 2 * lam * eps**2)
            acc_a[j] += np.abs(sm[node_idx]) ** 2
        acc_b += husimi_at(m.psi, ys, ps)
        if far_probe is not None:
            far += float(husimi_at(m.psi, np.atleast_2d(far_probe[0]), np.atleast_2d(far_probe[1]))[0, 0])
    k = len(members)
    a_sup = tuple(float(v) for v in (acc_a / k).max(axis=1))
    b_sup = float((acc_b / k).max())
    implied = max(b_sup, max(a * lam ** (n / 2) for a, lam in zip(a_sup, lambdas)))
    return OperatorReport(eps, tuple(lambdas), a_sup, b_sup, implied, far / k, k)


def ladder_ratio(values: Sequence[float]) -> float:
    """``max/min`` of a positive sequence; the boundedness proxy across an eps-ladder."""
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min())


def uniformly_bounded(reports: Sequence[OperatorReport], factor: float = 2.0) -> bool:
    """Whether the averaged-Husimi sup stays within ``factor`` across the ladder."""
    return ladder_ratio([r.husimi_sup for r in reports]) <= factor


@dataclass
class NoConcentrationReport:
    eps: float
    times: tuple
    husimi_sup: tuple
    ratio_to_initial: tuple
    persists: bool


def no_concentration_diagnostics(averaged: dict, eps: float, factor: float = 2.0,
                                 mc_rel_error: float = 0.0) -> NoConcentrationReport:
    """``averaged`` maps sample time to the w-averaged Husimi values on the probe lattice."""
    times = tuple(sorted(averaged))
    sups = tuple(float(np.max(averaged[t])) for t in times)
    ratios = tuple(s / sups[0] for s in sups)
    ok = all(r <= factor * (1 + mc_rel_error) for r in ratios)
    return NoConcentrationReport(eps, times, sups, ratios, ok)


@dataclass
class TightnessReport:
    radii: tuple
    tail_sup: tuple  # per radius, sup over t and w
    time_variation: tuple  # per dictionary member, mean over w
    space_ok: bool
    time_ok: bool


def tightness_diagnostics(tails: np.ndarray, integrals: np.ndarray, times: np.ndarray, radii: Sequence[float],
                          bound: float = 1.0) -> TightnessReport:
    """Space and time tightness tables.

    ``tails`` has shape ``(n_w, n_t, len(radii))``; ``integrals`` ``(n_w, n_t, K)`` with the
    dictionary integrals of the Husimi transforms.  The time variation
    ``int_0^T |d/dt int f dW~_t| dt`` is the total variation of the sampled series.
    """
    tails = np.asarray(tails)
    sup = tuple(float(v) for v in tails.max(axis=(0, 1)))
    tv = np.abs(np.diff(np.asarray(integrals), axis=1)).sum(axis=1).mean(axis=0)
    space_ok = all(np.diff(sup) <= 1e-15) if len(sup) > 1 else True
    return TightnessReport(tuple(radii), sup, tuple(float(v) for v in tv), bool(space_ok),
                           bool(np.all(np.isfinite(tv)) and np.max(tv) <= bound * len(times)))


def fit_tail_constant(tail0: Sequence[float], tailT: Sequence[float], radii: Sequence[float], T: float,
                      energy: float) -> float:
    """Smallest ``c`` with ``tail_T(R) <= tail_0(R) + c T (1 + energy) / R`` at every sampled radius."""
    gain = np.asarray(tailT, dtype=float) - np.asarray(tail0, dtype=float)
    return float(max(0.0, np.max(gain * np.asarray(radii, dtype=float) / (T * (1 + energy)))))


def quantum_dist_integrability(times, densities, grid: SpatialGrid, pot: Potential, eps: float, R: float,
                               beta: float = 2.0, deltas: Sequence[float] = (1e-3, 1e-2, 1e-1)) -> dict:
    """``int_0^T int_{|x|<=R} dist^-beta |psi_t|^2 dx dt`` and its Husimi-marginal delta ladder.

    The ladder uses ``(dist^beta + delta)^-1`` against ``|psi_t|^2 * G_eps``, the position
    marginal of the Husimi transform.
    """
    X = grid.points
    inside = np.sqrt(np.sum(X**2, axis=-1)) <= R
    d = pot.dist_to_S(X)
    raw, ladder = [], {delta: [] for delta in deltas}
    for rho in densities:
        raw.append(float(np.sum(np.where(inside, rho / d**beta, 0)) * grid.cell_volume))
        sm = np.clip(gaussian_smooth(rho, grid.axes, eps), 0, None)
        for delta in deltas:
            ladder[delta].append(float(np.sum(np.where(inside, sm / (d**beta + delta), 0)) * grid.cell_volume))
    t = np.asarray(times, dtype=float)
    return {"raw": float(trapezoid(raw, t)),
            "ladder": {float(k): float(trapezoid(v, t)) for k, v in ladder.items()}}


# ---------------------------------------------------------------------------
# experiment


@dataclass(frozen=True)
class GridRule:
    """Per-eps box and resolution.

    Position spread ``R eps^alpha + k eps^(1-alpha) t_x`` and momentum spread
    ``k eps^(1-alpha) + R eps^alpha t_p`` are added to the classical reach; the box keeps
    the outer ``layer`` fraction free and the momentum cutoff exceeds the momentum reach
    by ``1/band``.  ``N`` is the next power of two.  With ``offset_diagonal`` the second
    axis is shifted by a quarter cell so that no full- or half-step node lies on
    ``x_1 = x_2``.
    """

    k_tail: float = 6.0
    t_x: float = 1.0
    t_p: float = 1.0
    layer: float = 0.05
    band: float = 0.75
    min_count: int = 32
    max_count: int = 4096
    offset_diagonal: bool = False

    def build(self, eps: float, alpha: float, R: float, x_reach: np.ndarray, p_reach: np.ndarray
              ) -> SpatialGrid:
        sx = R * eps**alpha + self.k_tail * eps ** (1 - alpha) * self.t_x
        sp = self.k_tail * eps ** (1 - alpha) + R * eps**alpha * self.t_p
        half = (np.max(x_reach) + sx) / (1 - 2 * self.layer)
        p_need = (np.max(p_reach) + sp) / self.band
        dx = np.pi * eps / p_need
        count = self.min_count
        while count * dx < 2 * half:
            count *= 2
        if count > self.max_count:
            raise OutOfBox(f"eps={eps}: grid would need {count} points per axis")
        n = len(x_reach)
        L = count * dx
        axes = [Axis(-L / 2, L / 2, count) for _ in range(n)]
        if self.offset_diagonal and n == 2:
            a = axes[1]
            axes[1] = Axis(a.lo + a.spacing / 4, a.hi + a.spacing / 4, count)
        return SpatialGrid(tuple(axes))


@dataclass(frozen=True)
class ExperimentSettings:
    samples: int = 16
    grid_rule: GridRule = GridRule()
    dt_factor: Optional[float] = None  # dt = dt_factor * eps when set
    energy_cap: Optional[float] = None
    tail_tol: float = 1e-6
    nyquist_tol: float = 1e-6
    flow: FlowConfig = FlowConfig()
    dictionary_seed: int = 0
    dictionary_K: int = 64
    dictionary_pad: float = 1.0
    skip_below: float = 1e-10  # skipped Husimi mass <= skip_below * box volume
    tail_radii: tuple = (2.0, 4.0)
    probe_count: int = 0  # > 0 enables the averaged-Husimi probes at t = 0, T/2, T
    integrability_R: Optional[float] = None
    beta: float = 2.0
    deltas: tuple = (1e-3, 1e-2, 1e-1)
    threads: int = 1


@dataclass
class EpsResult:
    eps: float
    D: float
    stderr: float
    excluded_fraction: float
    D0: float
    grid: dict
    per_w: list  # dicts
    tightness: Optional[TightnessReport] = None
    no_concentration: Optional[NoConcentrationReport] = None
    integrability: dict = field(default_factory=dict)
    absorbed_mass: float = 0.0


@dataclass
class ConvergenceReport:
    eps: tuple
    results: list
    dictionary: TestDictionary
    family: RandomFamily
    potential: dict
    T: float
    settings: ExperimentSettings
    runtime: float = 0.0

    @property
    def D(self) -> np.ndarray:
        return np.array([r.D for r in self.results])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([r.stderr for r in self.results])

    @property
    def excluded_fraction(self) -> np.ndarray:
        return np.array([r.excluded_fraction for r in self.results])

    def strictly_decreasing(self) -> bool:
        """Along the ladder ordered by decreasing eps."""
        order = np.argsort(-np.asarray(self.eps))
        d = self.D[order]
        return bool(np.all(np.diff(d) < 0))


def classical_reach(family: RandomFamily, pot: Potential, T: float, flow: FlowConfig, samples: int = 33) -> tuple:
    """Max ``|x_i(t)|`` and ``|p_i(t)|`` over the family's labels and ``t`` in ``[0, T]``."""
    w = family.labels()
    n = family.n
    res = flow_map(w[:, :n], w[:, n:], pot, T, flow, samples)
    return np.max(np.abs(res.x), axis=(0, 1)), np.max(np.abs(res.p), axis=(0, 1))


def _dictionary_box(family: RandomFamily, pot: Potential, T: float, flow: FlowConfig, pad: float) -> tuple:
    w = family.labels()
    n = family.n
    res = flow_map(w[:, :n], w[:, n:], pot, T, flow, 33)
    z = np.concatenate([res.x, res.p], axis=-1).reshape(-1, 2 * n)
    return tuple(np.floor(z.min(axis=0) - pad)), tuple(np.ceil(z.max(axis=0) + pad))


def _member_task(args) -> dict:
    (eps, index, w, family, pot_spec, grid, T, settings, dictionary, probes) = args
    pot = Potential.from_spec(pot_spec)
    n = family.n
    out = {"eps": eps, "index": index, "w": [float(v) for v in w], "excluded": False, "reason": ""}
    times = np.linspace(0.0, T, settings.samples)
    try:
        psi0 = wave_packet(grid, eps, family.alpha, w[:n], w[n:], family.envelope)
    except OutOfBox as exc:
        out.update(excluded=True, reason=f"OutOfBox: {exc}")
        return out
    limit = limit_measure(family, w)
    path = push_forward(limit, pot, T, settings.flow, samples=list(times))
    dt = settings.dt_factor * eps if settings.dt_factor else None
    cfg = PropagatorConfig(dt=dt, tail_tol=settings.tail_tol, nyquist_tol=settings.nyquist_tol,
                           energy_cap=settings.energy_cap, tail_radii=tuple(settings.tail_radii))
    ints, dists, masses, densities = [], [], [], []
    probe_times = {0: 0.0, settings.samples // 2: float(times[settings.samples // 2]),
                   settings.samples - 1: float(T)}
    probe_vals = {}
    counter = {"i": 0}

    def on_sample(t, psi):
        i = counter["i"]
        x_axes, p_axes, blocks = husimi_blocks(psi, window="auto", x_stride=_stride(psi), skip_below=settings.skip_below)
        vals, mass = dictionary.block_integrals(x_axes, p_axes, blocks)
        ints.append(vals)
        masses.append(mass)
        dists.append(d_P(vals, path.ensembles[i], dictionary))
        if settings.integrability_R is not None:
            densities.append(psi.density())
        if probes is not None and i in probe_times:
            probe_vals[probe_times[i]] = husimi_at(psi, probes[0], probes[1])
        counter["i"] += 1

    try:
        traj = propagate(psi0, pot, T, cfg, samples=list(times), callback=on_sample, keep_states=False)
    except (TailOverflow, NyquistViolation) as exc:
        out.update(excluded=True, reason=f"{type(exc).__name__}: {exc}")
        return out
    out.update(
        D_w=float(max(dists)),
        d_t=[float(v) for v in dists],
        husimi_mass=[float(m) for m in masses],
        integrals=np.asarray(ints),
        tails=np.array([d.tails for d in traj.diagnostics]),
        mass_drift=float(max(abs(d.mass - 1) for d in traj.diagnostics)),
        energy_drift=float(max(abs(d.energy - traj.diagnostics[0].energy) for d in traj.diagnostics)),
        absorbed=float(path.ensembles[-1].absorbed_mass()),
        dt=float(traj.dt),
        probes=probe_vals,
    )
    if settings.integrability_R is not None and pot.has_singular:
        out["q_integrability"] = quantum_dist_integrability(times, densities, grid, pot, eps,
                                                            settings.integrability_R, settings.beta,
                                                            settings.deltas)
        rep = dist_integrability(path, pot, settings.integrability_R, settings.beta, (0.0,) + tuple(settings.deltas))
        out["c_integrability"] = rep.values[0]
    return out


def _stride(psi: Wavefunction) -> int:
    # Husimi spectra carry exp(-eps k^2/4): spacing h aliases at exp(-pi^2 eps/h^2), 1e-12 for h = 0.6 sqrt(eps)
    return max(1, int(0.6 * np.sqrt(psi.eps) / float(np.max(psi.grid.dx))))


def _run_tasks(tasks: list, threads: int) -> list:
    if threads <= 1 or len(tasks) <= 1:
        return [_member_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_member_task, tasks, chunksize=1))


def run_convergence_experiment(family: RandomFamily, pot: Potential, T: float, eps_ladder: Sequence[float],
                               settings: ExperimentSettings = ExperimentSettings()) -> ConvergenceReport:
    """The averaged Husimi-versus-flow experiment over an eps-ladder.

    Members raising a numerical guard are excluded and counted.  Reductions over ``w``
    use correctly rounded sums in label order, so results do not depend on ``threads``.
    """
    import time

    start = time.perf_counter()
    x_reach, p_reach = classical_reach(family, pot, T, settings.flow)
    lo, hi = _dictionary_box(family, pot, T, settings.flow, settings.dictionary_pad)
    dictionary = TestDictionary(lo, hi, K=settings.dictionary_K, seed=settings.dictionary_seed)
    labels = family.labels()
    probes = _probe_lattice(family, settings.probe_count, 1.0) if settings.probe_count else None
    grids, tasks = {}, []
    for eps in eps_ladder:
        g = settings.grid_rule.build(eps, family.alpha, family.envelope_radius, x_reach, p_reach)
        grids[eps] = g
        for i, w in enumerate(labels):
            tasks.append((eps, i, w, family, pot.spec(), g, T, settings, dictionary, probes))
    outs = _run_tasks(tasks, settings.threads)
    results = []
    for eps in eps_ladder:
        rows = sorted((o for o in outs if o["eps"] == eps), key=lambda o: o["index"])
        kept = [o for o in rows if not o["excluded"]]
        Dw = np.array([o["D_w"] for o in kept])
        k = len(kept)
        mean = math.fsum(Dw) / k if k else float("nan")
        var = math.fsum((Dw - mean) ** 2) / (k - 1) if k > 1 else float("nan")
        g = grids[eps]
        res = EpsResult(
            eps=float(eps), D=mean, stderr=math.sqrt(var / k) if k > 1 else float("nan"),
            excluded_fraction=1 - k / len(rows), D0=math.fsum(o["d_t"][0] for o in kept) / k if k else float("nan"),
            grid={"lo": [a.lo for a in g.axes], "hi": [a.hi for a in g.axes], "count": [a.count for a in g.axes],
                  "dt": kept[0]["dt"] if kept else None},
            per_w=rows,
            absorbed_mass=math.fsum(o["absorbed"] for o in kept) / k if k else 0.0,
        )
        if kept:
            times = np.linspace(0.0, T, settings.samples)
            res.tightness = tightness_diagnostics(np.array([o["tails"] for o in kept]),
                                                  np.array([o["integrals"] for o in kept]), times,
                                                  settings.tail_radii)
            if probes is not None:
                avg = {t: sum(o["probes"][t] for o in kept) / k for t in kept[0]["probes"]}
                res.no_concentration = no_concentration_diagnostics(avg, eps)
            if "q_integrability" in kept[0]:
                res.integrability = {
                    "quantum_raw": math.fsum(o["q_integrability"]["raw"] for o in kept) / k,
                    "quantum_ladder": {d: math.fsum(o["q_integrability"]["ladder"][d] for o in kept) / k
                                       for d in kept[0]["q_integrability"]["ladder"]},
                    "classical_raw": math.fsum(o["c_integrability"] for o in kept) / k,
                }
        results.append(res)
    return ConvergenceReport(tuple(float(e) for e in eps_ladder), results, dictionary, family, pot.spec(), T,
                             settings, time.perf_counter() - start)
