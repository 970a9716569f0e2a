import math
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


# Density / mixture documents
class DensityRef(BaseModel):
    family: str
    params: List[float] = []


def _decimal(value: str) -> str:
    number = float(value)
    if not math.isfinite(number):
        raise ValueError(f"not a finite decimal: {value!r}")
    return value


class ComponentDocument(BaseModel):
    w: str
    mu: List[str]
    sigma: str

    @field_validator("w", "sigma")
    @classmethod
    def check_decimal(cls, value: str) -> str:
        return _decimal(value)

    @field_validator("mu")
    @classmethod
    def check_location(cls, value: List[str]) -> List[str]:
        return [_decimal(v) for v in value]


class MixtureDocument(BaseModel):
    dim: int = Field(ge=1)
    kernel: DensityRef
    components: List[ComponentDocument] = Field(min_length=1)


# Geometry
class GridSpec(BaseModel):
    """Axis-aligned evaluation lattice"""

    center: List[float]
    half_width: List[float]
    points_per_axis: int = Field(ge=2)

    @model_validator(mode="after")
    def check_axes(self):
        if len(self.center) != len(self.half_width) or not self.center:
            raise ValueError("center and half_width must have the same nonzero length")
        if any(h <= 0 for h in self.half_width):
            raise ValueError("half_width must be positive on every axis")
        return self

    @property
    def dim(self) -> int:
        return len(self.center)

    def axes(self) -> List[np.ndarray]:
        return [
            np.linspace(c - h, c + h, self.points_per_axis)
            for c, h in zip(self.center, self.half_width)
        ]

    def points(self) -> np.ndarray:
        """Lattice points in lexicographic order, shape (points_per_axis**dim, dim)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def spacing(self) -> np.ndarray:
        return np.array([2.0 * h / (self.points_per_axis - 1) for h in self.half_width])

    @classmethod
    def over_box(cls, box: "Box", points_per_axis: int) -> "GridSpec":
        lower, upper = np.asarray(box.lower), np.asarray(box.upper)
        return cls(
            center=list((lower + upper) / 2.0),
            half_width=list((upper - lower) / 2.0),
            points_per_axis=points_per_axis,
        )


class Box(BaseModel):
    lower: List[float]
    upper: List[float]

    @model_validator(mode="after")
    def check_bounds(self):
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must have the same nonzero length")
        if any(not (lo < hi) for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("every lower bound must be below its upper bound")
        return self

    @property
    def dim(self) -> int:
        return len(self.lower)

    @classmethod
    def from_flat(cls, values: List[float]) -> "Box":
        """[a1, b1, a2, b2, ...] -> box"""
        if len(values) < 2 or len(values) % 2:
            raise ValueError("box needs an even number of bounds")
        return cls(lower=list(values[0::2]), upper=list(values[1::2]))

    @classmethod
    def cube(cls, half_width: float, dim: int) -> "Box":
        return cls(lower=[-half_width] * dim, upper=[half_width] * dim)

    def shifted(self, offset) -> "Box":
        offset = np.asarray(offset, dtype=float)
        return Box(lower=list(np.asarray(self.lower) + offset), upper=list(np.asarray(self.upper) + offset))

    def corners(self) -> np.ndarray:
        mesh = np.meshgrid(*[[lo, hi] for lo, hi in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# Construction
class ConstructionOptions(BaseModel):
    margin: float = Field(default=1.0, gt=0)
    tau: Optional[float] = Field(default=None, gt=0)
    k0: float = Field(default=1.0, gt=0)
    k_cap: float = Field(default=1024.0, gt=0)
    quad_order: Optional[int] = Field(default=None, ge=2)
    weight_floor: float = Field(default=1e-14, ge=0)
    max_components: int = Field(default=1_000_000, ge=1)
    grid_points: Optional[int] = Field(default=None, ge=2)
    anchor: bool = False
    tail_scope: Literal["ball", "global"] = "ball"
    eta: float = Field(default=1e-4, gt=0, lt=1)
    max_delta_halvings: int = Field(default=30, ge=0)
    n_jobs: Optional[int] = Field(default=None, ge=1)

    @property
    def bump_width(self) -> float:
        return self.tau if self.tau is not None else self.margin / 2.0

    def grid_points_for(self, dim: int) -> int:
        if self.grid_points is not None:
            return self.grid_points
        return 2049 if dim == 1 else 65


class BandwidthChoice(BaseModel):
    k: float
    measured: float
    trials: List[Tuple[float, float]] = []


class ApproxReport(BaseModel):
    mode: Literal["uniform", "lp"]
    eps: Optional[float] = None
    p: Optional[float] = None
    r: float
    k: float
    delta: float
    m: int
    c_m: float
    k_m: Optional[float] = None
    C_s: Optional[float] = None
    mass: float
    certified_bound: Optional[float] = None
    measured_mollification: Optional[float] = None
    measured_total: Optional[float] = None
    grid_slack: Optional[float] = None
    tail_scope: str = "ball"
    grid: Optional[GridSpec] = None
    elapsed_s: float = 0.0

    def to_document(self) -> Dict[str, Any]:
        params: Dict[str, Any] = {"r": self.r, "k": self.k, "delta": self.delta, "m": self.m, "eps": self.eps}
        if self.p is not None:
            params["p"] = self.p
        return {
            "mode": self.mode,
            "params": params,
            "c_m": self.c_m,
            "k_m": self.k_m,
            "certified_bound": self.certified_bound,
            "measured_mollification": self.measured_mollification,
            "measured_total": self.measured_total,
            "elapsed_s": self.elapsed_s,
            "mass": self.mass,
            "C_s": self.C_s,
            "grid_slack": self.grid_slack,
            "tail_scope": self.tail_scope,
            "grid": self.grid.model_dump() if self.grid is not None else None,
        }


class SweepRow(BaseModel):
    labels: Dict[str, float]
    certified_bound: Optional[float] = None
    measured_sup: Optional[float] = None
    measured_lp: Optional[float] = None
    m: Optional[int] = None
    elapsed_s: float = 0.0
    error: Optional[str] = None
