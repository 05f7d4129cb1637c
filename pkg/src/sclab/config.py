"""JSON run configuration with schema validation.

Unknown keys are rejected.  Validation failures are reported as :class:`ConfigError`
carrying the line of the offending key (or of the enclosing object for missing keys).
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .potential import CATALOG

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PotentialConfig(_Strict):
    name: str = "zero"
    n: Literal[1, 2] = 1
    params: dict[str, Union[float, list[float]]] = Field(default_factory=dict)
    charges: list[float] = Field(default_factory=list)
    pairs: Optional[list[tuple[int, int]]] = None
    soften: float = Field(0.0, ge=0)
    singular_enabled: bool = True

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in CATALOG:
            raise ValueError(f"unknown potential {v!r}; choose from {sorted(CATALOG)}")
        return v


class GridConfig(_Strict):
    lo: list[float]
    hi: list[float]
    count: list[int]

    @model_validator(mode="after")
    def _shape(self):
        if not len(self.lo) == len(self.hi) == len(self.count):
            raise ValueError("lo, hi and count need one entry per dimension")
        if any(c < 16 or c & (c - 1) for c in self.count):
            raise ValueError("counts must be powers of two, at least 16")
        return self


class FamilyConfig(_Strict):
    law: Literal["uniform_box", "truncated_gaussian", "dirac"] = "uniform_box"
    center: list[float]
    scale: list[float]
    truncation: float = Field(2.0, gt=0)
    alpha: float = Field(0.5, ge=0, le=1)
    envelope_radius: float = Field(2.5, gt=0)
    envelope_power: int = Field(6, ge=2)
    n_w: int = Field(64, ge=1)


class SeedsConfig(_Strict):
    family: int = 0
    dictionary: int = 0


class TestFunctionConfig(_Strict):
    """Tensor product of radial bumps."""

    __test__ = False

    x_center: list[float]
    x_radius: float = Field(gt=0)
    p_center: list[float]
    p_radius: float = Field(gt=0)
    plateau: float = Field(0.0, ge=0, lt=1)  # fraction of the radius


class PropagateOptions(_Strict):
    dt: Optional[float] = Field(None, gt=0)
    energy_cap: Optional[float] = Field(None, gt=0)
    tail_tol: float = Field(1e-6, gt=0, lt=1)
    nyquist_tol: float = Field(1e-6, gt=0, lt=1)
    tail_radii: tuple[float, float] = (2.0, 4.0)
    members: int = Field(1, ge=1)
    dump_fields: bool = True


class WignerOptions(_Strict):
    members: int = Field(1, ge=1)
    husimi_window: Optional[Union[int, Literal["auto"]]] = None
    test_function: Optional[TestFunctionConfig] = None


class ClassicalOptions(_Strict):
    h: float = Field(1e-3, gt=0)
    r_guard: float = Field(1e-3, gt=0)
    energy_cutoff: Optional[float] = Field(None, gt=0)
    R: float = Field(5.0, gt=0)
    beta: float = Field(2.0, gt=1)
    deltas: list[float] = Field(default_factory=lambda: [1e-3, 1e-2, 1e-1])
    test_function: Optional[TestFunctionConfig] = None


class ErrorTermsOptions(_Strict):
    members: int = Field(4, ge=1)
    smooth_test: bool = True
    tube: float = Field(0.0, ge=0)
    test_function: TestFunctionConfig


class ConvergeOptions(_Strict):
    k_tail: float = Field(6.0, gt=0)
    t_x: float = Field(1.0, ge=0)
    t_p: float = Field(1.0, ge=0)
    offset_diagonal: bool = False
    max_count: int = Field(4096, ge=32)
    dt_factor: Optional[float] = Field(None, gt=0)
    energy_cap: Optional[float] = Field(None, gt=0)
    tail_tol: float = Field(1e-6, gt=0, lt=1)
    nyquist_tol: float = Field(1e-6, gt=0, lt=1)
    tail_radii: tuple[float, float] = (2.0, 4.0)
    dictionary_K: int = Field(64, ge=1)
    skip_below: float = Field(1e-10, ge=0)
    probe_count: int = Field(0, ge=0)
    integrability_R: Optional[float] = Field(None, gt=0)
    beta: float = Field(2.0, gt=1)
    h: float = Field(1e-3, gt=0)
    r_guard: float = Field(1e-3, gt=0)


class ExperimentConfig(_Strict):
    potential: PotentialConfig
    family: FamilyConfig
    eps_ladder: list[float] = Field(min_length=1)
    T: float = Field(gt=0)
    samples: int = Field(16, ge=2)
    grid: Optional[GridConfig] = None
    seeds: SeedsConfig = SeedsConfig()
    output: str = "out"
    propagate: PropagateOptions = PropagateOptions()
    wigner: WignerOptions = WignerOptions()
    classical: ClassicalOptions = ClassicalOptions()
    errorterms: Optional[ErrorTermsOptions] = None
    converge: ConvergeOptions = ConvergeOptions()

    @field_validator("eps_ladder")
    @classmethod
    def _positive(cls, v):
        if any(e <= 0 for e in v):
            raise ValueError("eps values must be positive")
        return v

    @model_validator(mode="after")
    def _dimensions(self):
        n = self.potential.n
        if len(self.family.center) != 2 * n or len(self.family.scale) != 2 * n:
            raise ValueError(f"family center and scale need {2 * n} entries")
        if self.grid is not None and len(self.grid.count) != n:
            raise ValueError(f"grid needs {n} axes")
        return self

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.model_copy(update={"seeds": SeedsConfig(family=seed, dictionary=seed)})


def _locate(text: str, loc: tuple) -> Optional[int]:
    """1-based line of the deepest key in ``loc`` that appears in ``text``, scanning in order."""
    lines = text.splitlines()
    start, found = 0, None
    for key in loc:
        if not isinstance(key, str):
            continue
        pat = re.compile(r'"' + re.escape(key) + r'"\s*:')
        for i in range(start, len(lines)):
            if pat.search(lines[i]):
                start, found = i, i + 1
                break
        else:
            break
    return found


def parse_config(text: str, path: Optional[str] = None) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(err["loc"])
        field_path = ".".join(str(k) for k in loc) or "<root>"
        line = _locate(text, loc) or 1
        raise ConfigError(f"{field_path}: {err['msg']}", line, path) from None


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    return parse_config(text, str(p))
