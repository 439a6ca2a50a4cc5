"""Scenario config schema (versioned JSON documents)."""
import re
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from scenarios.protocol import InvalidConfigError

SCHEMA_VERSION = 1

# "PureDeath", "LinearBirthDeath(1)"
_CALL_FORM = re.compile(r"^\s*([A-Za-z_\-]+)\s*(?:\(\s*([^)]*?)\s*\))?\s*$")

_SEMIGROUP_KEYS = ("kind", "lambda", "lam", "offspring", "rate")
_STABLE_KEYS = ("alpha", "c")


class SemigroupSpec(BaseModel):
    """Semigroup kind tag plus parameters; offspring as [k, p_k] pairs."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    kind: str
    lam: Optional[float] = Field(default=None, alias="lambda")
    offspring: Optional[List[Tuple[float, float]]] = None
    rate: Optional[float] = None

    @model_validator(mode="before")
    @classmethod
    def parse_call_form(cls, data: Any) -> Any:
        if not isinstance(data, str):
            return data
        match = _CALL_FORM.match(data)
        if match is None:
            raise ValueError(f"Cannot parse semigroup '{data}'")
        kind, argument = match.groups()
        spec: Dict[str, Any] = {"kind": kind}
        if argument:
            spec["lambda"] = float(argument)
        return spec

    def build(self):
        from stability.semigroups import make_semigroup
        return make_semigroup(self.kind, lam=self.lam, offspring=self.offspring, rate=self.rate)


class StableSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float
    c: float = 1.0

    def build(self):
        from stability.discrete_ops import StableParams
        return StableParams(self.alpha, self.c)


class FellerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    b: float


class WindowSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["torus", "box"] = "torus"
    sides: List[float] = Field(default_factory=lambda: [1.0, 1.0])

    def build(self):
        from stability.processes import Window
        return Window(self.kind, tuple(float(s) for s in self.sides))


class SpectralComponent(BaseModel):
    """One (weight, probability measure) pair; no measure means uniform on the window."""

    model_config = ConfigDict(extra="forbid")

    weight: float = Field(gt=0)
    measure: Optional[Dict[str, Any]] = None


class ShapeSpec(BaseModel):
    """Irreducible shape weight_j * delta_{center_j} of a Levy spectral measure."""

    model_config = ConfigDict(extra="forbid")

    weight: float = Field(gt=0)
    center: List[float]


class ScenarioConfig(BaseModel):
    """
    Full description of one run.

    Top-level ``kind``/``lambda``/``offspring``/``rate`` fold into ``sg``,
    ``alpha``/``c`` into ``stable`` and ``b`` into ``feller``.
    """

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    schema_version: int = SCHEMA_VERSION
    scenario: str
    seed: Optional[int] = Field(default=None, ge=0, lt=2 ** 64)
    N: int = Field(default=10_000, ge=1)
    t: List[float] = Field(default_factory=lambda: [0.2, 0.5, 0.8])
    alpha_level: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    tol: Optional[float] = Field(default=None, gt=0.0)
    corrupt_alpha: float = 0.0

    semigroup: Optional[SemigroupSpec] = Field(default=None, alias="sg")
    stable: Optional[StableSpec] = None
    feller: Optional[FellerSpec] = None

    window: WindowSpec = Field(default_factory=WindowSpec)
    spectral: Optional[List[SpectralComponent]] = None
    partition: int = Field(default=4, ge=1)
    z_grid: List[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    test_functions: Optional[List[Dict[str, Any]]] = None
    # (s, t, z) points per axis for semigroup-validate; 10, or 4 for General semigroups
    grid_points: Optional[int] = Field(default=None, ge=2)

    # thinning-diffusion
    total_scale: float = Field(default=1.0, gt=0.0)
    mixture: Optional[Dict[str, Any]] = None
    shapes: Optional[List[ShapeSpec]] = None
    epsilon: float = Field(default=0.05, gt=0.0, lt=1.0)

    # CB: (x, t, z) triples for the transition Laplace check
    transition_points: List[Tuple[float, float, float]] = Field(default_factory=lambda: [
        (1.0, 0.5, 1.0), (2.0, 1.0, 0.5), (0.5, 0.2, 2.0), (3.0, 2.0, 0.3), (1.0, 3.0, 1.0)
    ])
    yaglom_time: float = Field(default=8.0, gt=0.0)

    csv_samples: int = Field(default=1000, ge=0)
    out: Optional[str] = Field(default=None, exclude=True)

    @model_validator(mode="before")
    @classmethod
    def fold_shorthands(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        if any(key in data for key in _SEMIGROUP_KEYS):
            if "sg" in data or "semigroup" in data:
                raise ValueError("Give the semigroup either as 'sg' or through top-level keys, not both")
            spec = {key: data.pop(key) for key in _SEMIGROUP_KEYS if key in data}
            if "lam" in spec:
                spec["lambda"] = spec.pop("lam")
            data["sg"] = spec
        if any(key in data for key in _STABLE_KEYS):
            if "stable" in data:
                raise ValueError("Give alpha/c either under 'stable' or at top level, not both")
            data["stable"] = {key: data.pop(key) for key in _STABLE_KEYS if key in data}
        if "b" in data:
            if "feller" in data:
                raise ValueError("Give b either under 'feller' or at top level, not both")
            data["feller"] = {"b": data.pop("b")}
        return data

    @field_validator("schema_version")
    @classmethod
    def check_schema_version(cls, value: int) -> int:
        if value != SCHEMA_VERSION:
            raise ValueError(f"Unsupported schema_version {value}; this runner reads version {SCHEMA_VERSION}")
        return value

    @field_validator("t")
    @classmethod
    def check_t_grid(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 < t < 1.0 for t in value):
            raise ValueError(f"t grid must be non-empty with entries in (0, 1), got {value}")
        return value

    @field_validator("z_grid")
    @classmethod
    def check_z_grid(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 <= z < 1.0 for z in value):
            raise ValueError(f"z grid must be non-empty with entries in [0, 1), got {value}")
        return value

    @property
    def scaling_alpha(self) -> Optional[float]:
        """Exponent used in the scale factors: alpha shifted by ``corrupt_alpha``, None when unshifted."""
        if not self.corrupt_alpha:
            return None
        return self.require("stable").alpha + self.corrupt_alpha

    def require(self, field_name: str) -> Any:
        value = getattr(self, field_name)
        if value is None:
            raise InvalidConfigError(f"scenario '{self.scenario}' needs '{field_name}'")
        return value

    def report_dict(self) -> Dict[str, Any]:
        """Config as written into reports (and read back on replay)."""
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)
