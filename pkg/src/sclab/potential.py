"""Potentials ``U = U_b + U_s`` built from a bounded part and repulsive Coulomb pairs.

In dimension 2 the configuration ``x = (x_1, x_2)`` describes two particles on a
line, so a pair ``(i, j)`` contributes ``Z_i Z_j / |x_i - x_j|`` and the singular set
is the diagonal ``{x_i = x_j}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import OnSingularSet

__all__ = [
    "BoundedPart",
    "Potential",
    "EnergyFunction",
    "LowerBoundReport",
    "bounded_part",
    "coulomb_lower_bound_check",
    "CATALOG",
]

SINGULAR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BoundedPart:
    """Value/gradient pair with recorded bounds.

    ``sup_abs`` and ``lipschitz`` are ``None`` for members flagged smooth-unbounded
    (harmonic, linear); those are excluded from bound assertions.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    sup_abs: Optional[float]
    lipschitz: Optional[float]
    c2: bool = True
    grad_bv: bool = True
    params: dict = field(default_factory=dict)

    @property
    def smooth_unbounded(self) -> bool:
        return self.sup_abs is None


def _zero(n):
    return BoundedPart("zero", lambda x: np.zeros(np.shape(x)[:-1]), lambda x: np.zeros(np.shape(x)),
                       0.0, 0.0)


def _harmonic(n, omega=1.0, center=0.0):
    c = np.broadcast_to(np.asarray(center, dtype=float), (n,))
    w2 = float(omega) ** 2
    return BoundedPart(
        "harmonic",
        lambda x: 0.5 * w2 * np.sum((np.asarray(x) - c) ** 2, axis=-1),
        lambda x: w2 * (np.asarray(x) - c),
        None, None, params={"omega": float(omega), "center": c.tolist()},
    )


def _linear(n, kappa=1.0):
    k = np.broadcast_to(np.asarray(kappa, dtype=float), (n,)).copy()
    return BoundedPart(
        "linear",
        lambda x: np.asarray(x) @ k,
        lambda x: np.broadcast_to(k, np.shape(x)).copy(),
        None, None, params={"kappa": k.tolist()},
    )


def _cosine(n, amplitude=1.0, wavenumber=1.0):
    a, k = float(amplitude), float(wavenumber)
    return BoundedPart(
        "cosine",
        lambda x: a * np.sum(np.cos(k * np.asarray(x)), axis=-1),
        lambda x: -a * k * np.sin(k * np.asarray(x)),
        abs(a) * n, abs(a * k) * np.sqrt(n), params={"amplitude": a, "wavenumber": k},
    )


def _spline_well(n, depth=1.0, width=1.0):
    # C^1 but not C^2 at |x_i| = width: the second derivative jumps there.
    d, w = float(depth), float(width)

    def value(x):
        u = np.asarray(x) / w
        return -d * np.sum(np.where(np.abs(u) < 1, (1 - u**2) ** 2, 0.0), axis=-1)

    def grad(x):
        u = np.asarray(x) / w
        return np.where(np.abs(u) < 1, 4 * d * u * (1 - u**2) / w, 0.0)

    lip = 8 * abs(d) / (3 * np.sqrt(3) * w) * np.sqrt(n)
    return BoundedPart("spline_well", value, grad, abs(d) * n, lip, c2=False,
                       params={"depth": d, "width": w})


CATALOG = {
    "zero": _zero,
    "harmonic": _harmonic,
    "linear": _linear,
    "cosine": _cosine,
    "spline_well": _spline_well,
}


def bounded_part(name: str, n: int, **params) -> BoundedPart:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(n, **params)


@dataclass(frozen=True, eq=False)
class Potential:
    n: int
    bounded: BoundedPart
    charges: tuple = ()
    pairs: tuple = ()
    singular_enabled: bool = True
    soften: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "charges", tuple(float(z) for z in self.charges))
        object.__setattr__(self, "pairs", tuple((int(i), int(j)) for i, j in self.pairs))
        if any(z <= 0 for z in self.charges):
            raise ValueError("charges must be positive")
        for i, j in self.pairs:
            if not (0 <= i < self.n and 0 <= j < self.n and i != j):
                raise ValueError(f"invalid pair {(i, j)} for n={self.n}")
            if max(i, j) >= len(self.charges):
                raise ValueError("every paired particle needs a charge")
        if self.soften < 0:
            raise ValueError("soften must be >= 0")

    @classmethod
    def from_catalog(cls, name: str = "zero", n: int = 1, charges=(), pairs=None, soften=0.0,
                     singular_enabled=True, **params) -> "Potential":
        if pairs is None:
            pairs = ((0, 1),) if len(charges) >= 2 else ()
        return cls(n, bounded_part(name, n, **params), tuple(charges), tuple(pairs),
                   singular_enabled, soften)

    @property
    def has_singular(self) -> bool:
        return self.singular_enabled and len(self.pairs) > 0

    def pair_products(self) -> np.ndarray:
        return np.array([self.charges[i] * self.charges[j] for i, j in self.pairs])

    def dist_to_S(self, x) -> np.ndarray:
        """Euclidean distance to the union of the collision hyperplanes."""
        x = np.asarray(x, dtype=float)
        if not self.pairs:
            return np.full(x.shape[:-1], np.inf)
        d = [np.abs(x[..., i] - x[..., j]) / np.sqrt(2) for i, j in self.pairs]
        return np.minimum.reduce(d)

    def _check(self, x):
        if self.has_singular and self.soften == 0:
            dmin = np.min(self.dist_to_S(x)) if np.size(x) else np.inf
            if dmin < SINGULAR_TOL:
                raise OnSingularSet(f"point at distance {dmin:.3g} from the singular set")

    def singular_value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        if not self.has_singular:
            return out
        for (i, j), zz in zip(self.pairs, self.pair_products()):
            r2 = (x[..., i] - x[..., j]) ** 2 + self.soften**2
            out = out + zz / np.sqrt(r2)
        return out

    def singular_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        if not self.has_singular:
            return out
        for (i, j), zz in zip(self.pairs, self.pair_products()):
            r = x[..., i] - x[..., j]
            g = -zz * r / ((r**2 + self.soften**2) ** 1.5)
            out[..., i] += g
            out[..., j] -= g
        return out

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._check(x)
        return self.bounded.value(x) + self.singular_value(x)

    def evaluate_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._check(x)
        return self.bounded.grad(x) + self.singular_grad(x)

    def on_grid(self, grid) -> np.ndarray:
        return self.evaluate(grid.points)

    def energy(self, x, p) -> np.ndarray:
        return 0.5 * np.sum(np.asarray(p) ** 2, axis=-1) + self.evaluate(x)

    def spec(self) -> dict:
        """Picklable description accepted by :meth:`from_spec`."""
        return {"name": self.bounded.name, "n": self.n, "params": dict(self.bounded.params),
                "charges": list(self.charges), "pairs": [list(p) for p in self.pairs],
                "singular_enabled": self.singular_enabled, "soften": self.soften}

    @classmethod
    def from_spec(cls, spec: dict) -> "Potential":
        return cls.from_catalog(spec["name"], spec["n"], charges=tuple(spec.get("charges", ())),
                                pairs=tuple(tuple(p) for p in spec.get("pairs", ())) or None,
                                soften=spec.get("soften", 0.0),
                                singular_enabled=spec.get("singular_enabled", True),
                                **spec.get("params", {}))

    def describe(self) -> dict:
        return {
            "name": self.bounded.name,
            "n": self.n,
            "params": self.bounded.params,
            "charges": list(self.charges),
            "pairs": [list(p) for p in self.pairs],
            "singular_enabled": self.singular_enabled,
            "soften": self.soften,
            "c2": self.bounded.c2,
            "grad_bv": self.bounded.grad_bv,
            "sup_abs": self.bounded.sup_abs,
            "lipschitz": self.bounded.lipschitz,
        }


@dataclass(frozen=True)
class EnergyFunction:
    """``E(x, p) = |p|^2/2 + U(x)``."""

    potential: Potential

    def __call__(self, x, p):
        return self.potential.energy(x, p)


@dataclass(frozen=True)
class LowerBoundReport:
    status: str  # "ok", "violated" or "vacuous"
    worst_margin: float
    constant: float
    points: int


def coulomb_lower_bound_check(pot: Potential, sample_points) -> LowerBoundReport:
    """Check ``U_s(x) >= c_eff / dist(x, S)`` at the sample points.

    With the Euclidean hyperplane distance a single pair gives
    ``U_s = Z_i Z_j / (sqrt(2) dist)``, so the constant is ``c_eff = min Z_i Z_j / sqrt(2)``
    and the one-pair case is an equality.
    """
    pts = np.asarray(sample_points, dtype=float)
    if not pot.has_singular:
        return LowerBoundReport("vacuous", float("nan"), float("nan"), len(pts))
    c = float(np.min(pot.pair_products())) / np.sqrt(2)
    dist = pot.dist_to_S(pts)
    ok = dist > SINGULAR_TOL
    margin = pot.singular_value(pts[ok]) - c / dist[ok]
    # relative roundoff slack for the equality case
    slack = 1e-12 * np.abs(c / dist[ok])
    worst = float(np.min(margin)) if margin.size else float("nan")
    status = "ok" if np.all(margin >= -slack) else "violated"
    return LowerBoundReport(status, worst, c, int(ok.sum()))
