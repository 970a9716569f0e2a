"""Densities on R^n: metadata records, the builtin families and evaluation."""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
from scipy import special, stats

from .errors import DimensionError, InvalidParameter, ParseError, UnknownDensity, ZeroOnBall
from .monitoring import get_logger
from .schemas import DensityRef

logger = get_logger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)
PHI_AT_ONE = math.exp(-0.5) / SQRT_2PI
# half-width (in scale units) beyond which the mass is below 1e-16
GAUSS_REACH = 8.5
LAPLACE_REACH = 40.0
SIMPLEX_TOL = 1e-9


class ContinuityClass(str, Enum):
    CONTINUOUS = "continuous"
    ESSENTIALLY_BOUNDED = "essentially_bounded"
    GENERAL = "general"


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to an (N, dim) float array.

    In one dimension a flat array is read as N points; otherwise a flat array
    of length ``dim`` is a single point.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise DimensionError(f"scalar point for a {dim}-dimensional density")
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        if dim == 1:
            return arr.reshape(-1, 1)
        if arr.shape[0] != dim:
            raise DimensionError(f"point of dimension {arr.shape[0]} for a {dim}-dimensional density")
        return arr.reshape(1, dim)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"points of shape {arr.shape} for a {dim}-dimensional density")
    return arr


def as_vector(x, dim: int) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(x, dtype=float))
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise DimensionError(f"expected a vector of dimension {dim}, got shape {vec.shape}")
    return vec


@runtime_checkable
class Evaluable(Protocol):
    """Anything the norms and the convolution oracle can integrate."""

    dim: int

    def pdf(self, points) -> np.ndarray: ...

    @property
    def breakpoints(self) -> Tuple[Tuple[float, ...], ...]: ...

    @property
    def reach(self) -> float: ...

    def lp_tail(self, radius: float, p: float) -> Optional[float]: ...


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """A named density with optional analytic metadata.

    ``breakpoints`` lists, per axis, the coordinates where the density or its
    derivative jumps. ``tail`` maps a half-width R to the mass outside the
    cube [-R, R]^n. ``effective_radius`` is a cube half-width outside of
    which the density is numerically zero.
    ``factors`` holds one 1-D density per axis when the density is their
    product.
    """

    name: str
    dim: int
    density: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lipschitz: Optional[float] = None
    support_radius: Optional[float] = None
    continuity_class: ContinuityClass = ContinuityClass.CONTINUOUS
    ess_bound: Optional[float] = None
    family: Optional[str] = None
    params: Tuple[float, ...] = ()
    breakpoints: Tuple[Tuple[float, ...], ...] = ()
    tail: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    effective_radius: Optional[float] = None
    factors: Tuple["DensitySpec", ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidParameter(f"dimension must be positive, got {self.dim}")
        if not self.breakpoints:
            object.__setattr__(self, "breakpoints", tuple(() for _ in range(self.dim)))

    @property
    def is_continuous(self) -> bool:
        return self.continuity_class is ContinuityClass.CONTINUOUS

    @property
    def reach(self) -> float:
        if self.effective_radius is not None:
            return self.effective_radius
        if self.support_radius is not None:
            return self.support_radius
        raise InvalidParameter(f"density {self.name} has neither support nor effective radius")

    def pdf(self, points) -> np.ndarray:
        return np.asarray(self.density(as_points(points, self.dim)), dtype=float)

    def tail_mass(self, radius):
        """Upper bound on the mass outside [-radius, radius]^n (scalar or array)."""
        r = np.asarray(radius, dtype=float)
        if self.tail is not None:
            out = np.clip(self.tail(r), 0.0, 1.0)
        elif self.support_radius is not None:
            out = np.where(r >= self.support_radius, 0.0, 1.0)
        else:
            return None
        out = np.where(r <= 0, 1.0, out)
        return float(out) if out.ndim == 0 else out

    def lp_tail(self, radius: float, p: float) -> Optional[float]:
        """Upper bound on the L_p norm of the density outside [-radius, radius]^n."""
        mass = self.tail_mass(radius)
        if mass is None:
            return None
        if mass == 0.0 or p == 1:
            return mass
        if self.ess_bound is None:
            return None
        return (self.ess_bound ** (p - 1) * mass) ** (1.0 / p)

    def to_ref(self) -> DensityRef:
        if self.family is None:
            raise InvalidParameter(f"density {self.name} has no builtin family")
        return DensityRef(family=self.family, params=list(self.params))


def eval_density(d: DensitySpec, x) -> float:
    point = as_vector(x, d.dim)
    return float(d.pdf(point.reshape(1, d.dim))[0])


def _require(condition: bool, message: str):
    if not condition:
        raise InvalidParameter(message)


def _unpack(family: str, params: Sequence[float], count: int) -> Tuple[float, ...]:
    if len(params) != count:
        raise InvalidParameter(f"{family} takes {count} parameters, got {len(params)}")
    values = tuple(float(p) for p in params)
    _require(all(math.isfinite(v) for v in values), f"{family}: parameters must be finite")
    return values


def _label(family: str, params: Sequence[float]) -> str:
    return f"{family}:" + ",".join(f"{p:g}" for p in params)


def _gaussian_tail(mu, sigma):
    return lambda radius: special.ndtr((-radius - mu) / sigma) + special.ndtr((mu - radius) / sigma)


def _product_tail(axis_tails):
    def tail(radius):
        inside = 1.0
        for axis_tail in axis_tails:
            inside = inside * (1.0 - axis_tail(radius))
        return 1.0 - inside

    return tail


def _frozen_tail(dist):
    return lambda radius: dist.cdf(-radius) + dist.sf(radius)


def _gaussian(params) -> DensitySpec:
    mu, sigma = _unpack("gaussian", params, 2)
    _require(sigma > 0, "gaussian: sigma must be positive")

    def density(pts):
        z = (pts[:, 0] - mu) / sigma
        return np.exp(-0.5 * z * z) / (sigma * SQRT_2PI)

    return DensitySpec(
        name=_label("gaussian", (mu, sigma)),
        dim=1,
        density=density,
        lipschitz=PHI_AT_ONE / sigma**2,
        ess_bound=1.0 / (sigma * SQRT_2PI),
        family="gaussian",
        params=(mu, sigma),
        tail=_gaussian_tail(mu, sigma),
        effective_radius=abs(mu) + GAUSS_REACH * sigma,
    )


def _laplace(params) -> DensitySpec:
    mu, b = _unpack("laplace", params, 2)
    _require(b > 0, "laplace: scale b must be positive")

    def density(pts):
        return np.exp(-np.abs(pts[:, 0] - mu) / b) / (2.0 * b)

    return DensitySpec(
        name=_label("laplace", (mu, b)),
        dim=1,
        density=density,
        lipschitz=1.0 / (2.0 * b * b),
        ess_bound=1.0 / (2.0 * b),
        family="laplace",
        params=(mu, b),
        breakpoints=((mu,),),
        tail=_frozen_tail(stats.laplace(loc=mu, scale=b)),
        effective_radius=abs(mu) + LAPLACE_REACH * b,
    )


def _triangle(a: float, c: float, b: float):
    """Evaluator, Lipschitz constant and peak of the triangular density on [a, b]."""
    peak = 2.0 / (b - a)

    def density_1d(x):
        out = np.zeros_like(x)
        if c > a:
            rising = (x >= a) & (x < c)
            out[rising] = peak * (x[rising] - a) / (c - a)
        if b > c:
            falling = (x >= c) & (x <= b)
            out[falling] = peak * (b - x[falling]) / (b - c)
        else:
            out[x == c] = peak
        return out

    degenerate = c == a or c == b
    lipschitz = None if degenerate else max(peak / (c - a), peak / (b - c))
    return density_1d, lipschitz, peak


def _triangular_params(family: str, params):
    a, c, b = _unpack(family, params, 3)
    _require(a < b, f"{family}: need a < b")
    _require(a <= c <= b, f"{family}: mode must lie in [a, b]")
    return a, c, b


def _triangular(params) -> DensitySpec:
    a, c, b = _triangular_params("triangular", params)
    density_1d, lipschitz, peak = _triangle(a, c, b)
    reach = max(abs(a), abs(b))
    return DensitySpec(
        name=_label("triangular", (a, c, b)),
        dim=1,
        density=lambda pts: density_1d(pts[:, 0]),
        lipschitz=lipschitz,
        support_radius=reach,
        continuity_class=ContinuityClass.CONTINUOUS if lipschitz is not None else ContinuityClass.ESSENTIALLY_BOUNDED,
        ess_bound=peak,
        family="triangular",
        params=(a, c, b),
        breakpoints=((a, c, b),),
        tail=_frozen_tail(stats.triang(c=(c - a) / (b - a), loc=a, scale=b - a)),
        effective_radius=reach,
    )


def _epanechnikov(params) -> DensitySpec:
    mu, h = _unpack("epanechnikov", params, 2)
    _require(h > 0, "epanechnikov: bandwidth h must be positive")

    def density(pts):
        u = (pts[:, 0] - mu) / h
        return 0.75 / h * np.maximum(0.0, 1.0 - u * u)

    def cdf(x):
        u = np.clip((x - mu) / h, -1.0, 1.0)
        return 0.5 + 0.75 * u - 0.25 * u**3

    reach = abs(mu) + h
    # no Lipschitz metadata: the modulus falls back to the lattice estimate
    return DensitySpec(
        name=_label("epanechnikov", (mu, h)),
        dim=1,
        density=density,
        support_radius=reach,
        ess_bound=0.75 / h,
        family="epanechnikov",
        params=(mu, h),
        breakpoints=((mu - h, mu + h),),
        tail=lambda radius: cdf(-radius) + 1.0 - cdf(radius),
        effective_radius=reach,
    )


def _uniform(params) -> DensitySpec:
    a, b = _unpack("uniform", params, 2)
    _require(a < b, "uniform: need a < b")
    height = 1.0 / (b - a)

    def density(pts):
        x = pts[:, 0]
        return np.where((x >= a) & (x <= b), height, 0.0)

    reach = max(abs(a), abs(b))
    return DensitySpec(
        name=_label("uniform", (a, b)),
        dim=1,
        density=density,
        support_radius=reach,
        continuity_class=ContinuityClass.ESSENTIALLY_BOUNDED,
        ess_bound=height,
        family="uniform",
        params=(a, b),
        breakpoints=((a, b),),
        tail=_frozen_tail(stats.uniform(loc=a, scale=b - a)),
        effective_radius=reach,
    )


def _gmm(params) -> DensitySpec:
    values = tuple(float(p) for p in params)
    _require(len(values) >= 3 and len(values) % 3 == 0, "gmm: parameters are (weight, mu, sigma) triples")
    _require(all(math.isfinite(v) for v in values), "gmm: parameters must be finite")
    weights = np.array(values[0::3])
    means = np.array(values[1::3])
    sigmas = np.array(values[2::3])
    _require(bool(np.all(weights >= 0)), "gmm: weights must be nonnegative")
    _require(abs(math.fsum(weights) - 1.0) <= SIMPLEX_TOL, "gmm: weights must sum to 1")
    _require(bool(np.all(sigmas > 0)), "gmm: every sigma must be positive")

    def density(pts):
        z = (pts[:, 0:1] - means) / sigmas
        return np.exp(-0.5 * z * z) @ (weights / (sigmas * SQRT_2PI))

    def tail(radius):
        r = np.asarray(radius, dtype=float)[..., None]
        return (_gaussian_tail(means, sigmas)(r) * weights).sum(axis=-1)

    return DensitySpec(
        name=_label("gmm", values),
        dim=1,
        density=density,
        lipschitz=float(np.sum(weights * PHI_AT_ONE / sigmas**2)),
        ess_bound=float(np.sum(weights / (sigmas * SQRT_2PI))),
        family="gmm",
        params=values,
        tail=tail,
        effective_radius=float(np.max(np.abs(means) + GAUSS_REACH * sigmas)),
    )


def _gaussian2d(params) -> DensitySpec:
    if len(params) == 1:
        mu1, mu2, sigma = 0.0, 0.0, float(params[0])
    else:
        mu1, mu2, sigma = _unpack("gaussian2d", params, 3)
    _require(math.isfinite(sigma) and sigma > 0, "gaussian2d: sigma must be positive")
    center = np.array([mu1, mu2])

    def density(pts):
        d2 = np.sum((pts - center) ** 2, axis=1)
        return np.exp(-0.5 * d2 / sigma**2) / (2.0 * math.pi * sigma**2)

    return DensitySpec(
        name=_label("gaussian2d", (mu1, mu2, sigma)),
        dim=2,
        density=density,
        lipschitz=math.exp(-0.5) / (2.0 * math.pi * sigma**3),
        ess_bound=1.0 / (2.0 * math.pi * sigma**2),
        family="gaussian2d",
        params=(mu1, mu2, sigma),
        tail=_product_tail([_gaussian_tail(mu1, sigma), _gaussian_tail(mu2, sigma)]),
        effective_radius=max(abs(mu1), abs(mu2)) + GAUSS_REACH * sigma,
        factors=(_gaussian((mu1, sigma)), _gaussian((mu2, sigma))),
    )


def _triangular2d(params) -> DensitySpec:
    a, c, b = _triangular_params("triangular2d", params)
    density_1d, lipschitz, peak = _triangle(a, c, b)
    reach = max(abs(a), abs(b))
    axis_tail = _frozen_tail(stats.triang(c=(c - a) / (b - a), loc=a, scale=b - a))
    return DensitySpec(
        name=_label("triangular2d", (a, c, b)),
        dim=2,
        density=lambda pts: density_1d(pts[:, 0]) * density_1d(pts[:, 1]),
        lipschitz=None if lipschitz is None else math.sqrt(2.0) * lipschitz * peak,
        support_radius=math.sqrt(2.0) * reach,
        continuity_class=ContinuityClass.CONTINUOUS if lipschitz is not None else ContinuityClass.ESSENTIALLY_BOUNDED,
        ess_bound=peak * peak,
        family="triangular2d",
        params=(a, c, b),
        breakpoints=((a, c, b), (a, c, b)),
        tail=_product_tail([axis_tail, axis_tail]),
        effective_radius=reach,
        factors=(_triangular((a, c, b)),) * 2,
    )


BUILTINS: Dict[str, Callable[[Sequence[float]], DensitySpec]] = {
    "gaussian": _gaussian,
    "laplace": _laplace,
    "triangular": _triangular,
    "epanechnikov": _epanechnikov,
    "uniform": _uniform,
    "gmm": _gmm,
    "gaussian2d": _gaussian2d,
    "triangular2d": _triangular2d,
}


def builtin_density(name: str, params: Sequence[float]) -> DensitySpec:
    try:
        builder = BUILTINS[name]
    except KeyError:
        raise UnknownDensity(f"unknown density family {name!r}; known: {', '.join(sorted(BUILTINS))}") from None
    return builder(list(params))


def parse_density(text: str) -> DensitySpec:
    """Parse the ``family:p1,p2,...`` syntax."""
    family, sep, rest = text.strip().partition(":")
    if not sep or not family:
        raise ParseError(f"density must look like family:p1,p2,... got {text!r}")
    try:
        params = [float(tok) for tok in rest.split(",")] if rest.strip() else []
    except ValueError:
        raise ParseError(f"non-numeric density parameter in {text!r}") from None
    return builtin_density(family.strip(), params)


def density_from_ref(ref: Union[DensityRef, dict]) -> DensitySpec:
    if isinstance(ref, dict):
        ref = DensityRef.model_validate(ref)
    return builtin_density(ref.family, ref.params)


def translate_density(d: DensitySpec, a) -> DensitySpec:
    """Density x -> d(x - a) with shifted metadata."""
    offset = as_vector(a, d.dim)
    if not np.any(offset):
        return d
    shift = float(np.max(np.abs(offset)))
    support = None if d.support_radius is None else d.support_radius + float(np.linalg.norm(offset))
    effective = None if d.effective_radius is None else d.effective_radius + shift
    tail = None
    if d.tail is not None:
        tail = lambda radius: d.tail_mass(np.asarray(radius, dtype=float) - shift)
    return DensitySpec(
        name=f"{d.name}@{','.join(f'{v:g}' for v in offset)}",
        dim=d.dim,
        density=lambda pts: d.density(pts - offset),
        lipschitz=d.lipschitz,
        support_radius=support,
        continuity_class=d.continuity_class,
        ess_bound=d.ess_bound,
        breakpoints=tuple(tuple(b + offset[j] for b in axis) for j, axis in enumerate(d.breakpoints)),
        tail=tail,
        effective_radius=effective,
        factors=tuple(translate_density(fj, [offset[j]]) for j, fj in enumerate(d.factors)),
    )


def _ball_lattice(s: float, samples: int, dim: int):
    axis = np.linspace(-s, s, samples)
    if dim == 1:
        yield axis.reshape(-1, 1)
        return
    rows = max(1, 1_000_000 // samples)
    for start in range(0, samples, rows):
        mesh = np.meshgrid(axis[start : start + rows], axis, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        yield pts[np.einsum("ij,ij->i", pts, pts) <= s * s]


def ess_sup_on_ball(d: DensitySpec, s: float, samples: Optional[int] = None) -> float:
    """Maximum of the density over a lattice inside the closed ball of radius s."""
    if not s > 0:
        raise InvalidParameter(f"ball radius must be positive, got {s}")
    if d.dim > 2:
        raise DimensionError("lattice maxima are available in one or two dimensions")
    if samples is None:
        samples = 4097 if d.dim == 1 else 513
    best = 0.0
    for pts in _ball_lattice(s, samples, d.dim):
        if len(pts):
            best = max(best, float(np.max(d.pdf(pts))))
    if best <= 0.0:
        raise ZeroOnBall(f"{d.name} vanishes on the lattice of the ball of radius {s:g}")
    return best
