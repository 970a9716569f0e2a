"""Location-scale finite mixtures of a kernel density."""
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .densities import DensitySpec, as_points, as_vector, density_from_ref
from .errors import DimensionError, InvalidMixture, MixtureCraftError, ParseError
from .monitoring import get_logger
from .quadrature import MAX_EVALS_PER_CHUNK
from .schemas import ComponentDocument, MixtureDocument

logger = get_logger(__name__)

SIMPLEX_TOL = 1e-12
PARSE_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    location: Tuple[float, ...]
    scale: float


@dataclass(frozen=True, eq=False)
class Mixture:
    """h(x) = sum_i c_i sigma_i^-n g((x - mu_i) / sigma_i)"""

    kernel: DensitySpec
    components: Tuple[MixtureComponent, ...]
    dim: int
    _weights: np.ndarray = field(init=False, repr=False)
    _locations: np.ndarray = field(init=False, repr=False)
    _scales: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kernel.dim != self.dim:
            raise DimensionError(f"kernel dimension {self.kernel.dim} != mixture dimension {self.dim}")
        if not self.components:
            raise InvalidMixture("a mixture needs at least one component")
        object.__setattr__(self, "components", tuple(self.components))
        weights = np.array([c.weight for c in self.components], dtype=float)
        scales = np.array([c.scale for c in self.components], dtype=float)
        if any(len(c.location) != self.dim for c in self.components):
            raise DimensionError(f"every location must have dimension {self.dim}")
        locations = np.array([c.location for c in self.components], dtype=float).reshape(-1, self.dim)
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise InvalidMixture("weights must be finite and nonnegative")
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise InvalidMixture("scales must be finite and positive")
        if not np.all(np.isfinite(locations)):
            raise InvalidMixture("locations must be finite")
        total = math.fsum(weights)
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise InvalidMixture(f"weights sum to {total!r}, not 1")
        for name, arr in (("_weights", weights), ("_locations", locations), ("_scales", scales)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, kernel: DensitySpec, weights, locations, scales) -> "Mixture":
        locations = np.asarray(locations, dtype=float).reshape(len(weights), kernel.dim)
        components = tuple(
            MixtureComponent(float(w), tuple(float(v) for v in mu), float(s))
            for w, mu, s in zip(weights, locations, scales)
        )
        return cls(kernel=kernel, components=components, dim=kernel.dim)

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def locations(self) -> np.ndarray:
        return self._locations

    @property
    def scales(self) -> np.ndarray:
        return self._scales

    def __len__(self) -> int:
        return len(self.components)

    def pdf(self, points) -> np.ndarray:
        pts = as_points(points, self.dim)
        coef = self._weights / self._scales**self.dim
        m = len(coef)
        out = np.empty(len(pts))
        step = max(1, MAX_EVALS_PER_CHUNK // m)
        for start in range(0, len(pts), step):
            block = pts[start : start + step]
            z = (block[:, None, :] - self._locations[None, :, :]) / self._scales[None, :, None]
            values = self.kernel.pdf(z.reshape(-1, self.dim)).reshape(len(block), m)
            out[start : start + step] = values @ coef
        return out

    @property
    def breakpoints(self) -> Tuple[Tuple[float, ...], ...]:
        axes = []
        for j, kinks in enumerate(self.kernel.breakpoints):
            if not kinks:
                axes.append(())
                continue
            moved = self._locations[:, j : j + 1] + self._scales[:, None] * np.asarray(kinks)
            axes.append(tuple(np.unique(moved)))
        return tuple(axes)

    @property
    def reach(self) -> float:
        return float(np.max(np.max(np.abs(self._locations), axis=1) + self._scales * self.kernel.reach))

    @property
    def ess_bound(self) -> Optional[float]:
        if self.kernel.ess_bound is None:
            return None
        return float(np.sum(self._weights / self._scales**self.dim) * self.kernel.ess_bound)

    def _component_tails(self, radius: float) -> Optional[np.ndarray]:
        shifted = (radius - np.max(np.abs(self._locations), axis=1)) / self._scales
        tails = self.kernel.tail_mass(shifted)
        if tails is None:
            return None
        return np.asarray(tails, dtype=float)

    def tail_mass(self, radius: float) -> Optional[float]:
        """Upper bound on the mixture mass outside [-radius, radius]^n."""
        tails = self._component_tails(radius)
        if tails is None:
            return None
        return float(min(1.0, math.fsum(self._weights * tails)))

    def lp_tail(self, radius: float, p: float) -> Optional[float]:
        tails = self._component_tails(radius)
        if tails is None:
            return None
        if p == 1:
            return float(math.fsum(self._weights * tails))
        if self.kernel.ess_bound is None:
            return None
        peaks = self._weights / self._scales**self.dim * self.kernel.ess_bound
        # Minkowski over components
        return float(math.fsum(peaks ** ((p - 1) / p) * (self._weights * tails) ** (1.0 / p)))


def eval_mixture(mix: Mixture, x) -> float:
    point = as_vector(x, mix.dim)
    return float(mix.pdf(point.reshape(1, mix.dim))[0])


def shift_mixture(mix: Mixture, a) -> Mixture:
    offset = as_vector(a, mix.dim)
    return Mixture.from_arrays(mix.kernel, mix.weights, mix.locations + offset, mix.scales)


def dilate_view(mix: Mixture) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(c, z, k) with k_i = 1 / sigma_i and z_i = k_i mu_i."""
    k = 1.0 / mix.scales
    return mix.weights.copy(), mix.locations * k[:, None], k


def serialize_mixture(mix: Mixture) -> bytes:
    document = MixtureDocument(
        dim=mix.dim,
        kernel=mix.kernel.to_ref(),
        components=[
            ComponentDocument(w=repr(c.weight), mu=[repr(v) for v in c.location], sigma=repr(c.scale))
            for c in mix.components
        ],
    )
    return document.model_dump_json().encode("utf-8")


def parse_mixture(data: Union[bytes, str]) -> Mixture:
    try:
        document = MixtureDocument.model_validate_json(data)
    except ValidationError as exc:
        raise ParseError(f"malformed mixture document: {exc.errors()[0]['msg']}") from exc
    try:
        kernel = density_from_ref(document.kernel)
    except MixtureCraftError as exc:
        raise ParseError(f"bad kernel in mixture document: {exc}") from exc
    if kernel.dim != document.dim:
        raise ParseError(f"kernel {kernel.name} is {kernel.dim}-dimensional, document says {document.dim}")

    weights = np.array([float(c.w) for c in document.components])
    scales = np.array([float(c.sigma) for c in document.components])
    if any(len(c.mu) != document.dim for c in document.components):
        raise ParseError(f"every location must have {document.dim} coordinates")
    locations = np.array([[float(v) for v in c.mu] for c in document.components])

    if np.any(weights < 0):
        raise InvalidMixture("negative weight in mixture document")
    if np.any(scales <= 0):
        raise InvalidMixture("non-positive scale in mixture document")
    total = math.fsum(weights)
    if abs(total - 1.0) > PARSE_SIMPLEX_TOL:
        raise InvalidMixture(f"weights sum to {total!r}, outside the simplex tolerance")
    if abs(total - 1.0) > SIMPLEX_TOL:
        logger.info("Renormalizing parsed weights", total=total)
        weights = weights / total
    return Mixture.from_arrays(kernel, weights, locations, scales)


def concatenate(first: Mixture, second: Mixture) -> Mixture:
    """Equal-weight blend of two mixtures sharing a kernel."""
    if first.kernel.to_ref() != second.kernel.to_ref():
        raise InvalidMixture("mixtures use different kernels")
    return Mixture.from_arrays(
        first.kernel,
        np.concatenate([first.weights, second.weights]) / 2.0,
        np.vstack([first.locations, second.locations]),
        np.concatenate([first.scales, second.scales]),
    )
