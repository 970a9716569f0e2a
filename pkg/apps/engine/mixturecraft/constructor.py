"""Constructive pipeline turning a target density into a certified kernel mixture.

truncate -> select_bandwidth -> build_partition -> discretize -> certified_bound,
composed by ``approximate_uniform`` (sup norm on a box) and ``approximate_lp``.
"""
import contextlib
import math
import time
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy import ndimage

from .analysis import LpNorm, Mollified, SupNorm, Zero, lp_norm_diff, lp_tail_bound, sup_norm_diff_on_grid
from .config import get_settings
from .densities import ContinuityClass, DensitySpec, ess_sup_on_ball, translate_density
from .errors import (
    BandwidthNotFound,
    BudgetExceeded,
    ContinuityRequired,
    DimensionError,
    EssBoundRequired,
    InvalidParameter,
    MixtureCraftError,
    QuadratureInconsistency,
    ToleranceNotMet,
    ZeroKernel,
    ZeroOnBall,
)
from .mixture import Mixture, shift_mixture
from .monitoring import get_logger, monitored_construction
from .quadrature import composite_rule, integrate_box, interval_edges
from .schemas import ApproxReport, BandwidthChoice, Box, ConstructionOptions, GridSpec

logger = get_logger(__name__)

QUADRATURE_OVERSHOOT = 1e-9
MASS_TOL = 1e-8
MODULUS_SAFETY = 1.05
LATTICE_CAP_2D = 1024
KERNEL_BALL_ENLARGEMENTS = 10
LP_CONV_TOL = 1e-10
CELLS_PER_CHUNK = 4096


@dataclass(frozen=True)
class TruncationResult:
    """h = u f with u = 1 on ``bump_inner`` and h = 0 outside the ball of radius r."""

    h: DensitySpec
    r: float
    mass: float
    bump_inner: Box
    bump_width: Optional[float]
    margin: Optional[float] = None


@dataclass(frozen=True, eq=False)
class CellPartition:
    """Disjoint boxes in z-space covering the closed ball of radius ``ball_radius``.

    Boxes are half-open [lower, upper) except along the last column of each
    axis, which is closed.
    """

    lower: np.ndarray
    upper: np.ndarray
    reps: np.ndarray
    delta: float
    ball_radius: float
    side: float

    def __len__(self) -> int:
        return len(self.lower)

    @property
    def dim(self) -> int:
        return self.lower.shape[1]

    def diameters(self) -> np.ndarray:
        return np.linalg.norm(self.upper - self.lower, axis=1)

    def locate(self, points) -> np.ndarray:
        """Index of the cell holding each point, -1 when none does."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        top = np.max(self.upper, axis=0)
        inside = np.all(
            (pts[:, None, :] >= self.lower[None]) & ((pts[:, None, :] < self.upper[None]) | ((self.upper[None] == top) & (pts[:, None, :] <= top))),
            axis=2,
        )
        return np.where(inside.any(axis=1), np.argmax(inside, axis=1), -1)


@dataclass(frozen=True)
class DiscretizationFragment:
    c_m: float
    k_m: Optional[float]
    C_s: Optional[float]
    s: Optional[float]
    m: int
    dropped: int
    tail_scope: str


# Truncation
def smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def truncate(
    f: DensitySpec, K: Box, margin: float = 1.0, tau: Optional[float] = None, require_continuous: bool = True
) -> TruncationResult:
    if K.dim != f.dim:
        raise DimensionError(f"box dimension {K.dim} != density dimension {f.dim}")
    if not margin > 0:
        raise InvalidParameter(f"margin must be positive, got {margin}")
    tau = margin / 2.0 if tau is None else tau
    if not 0 < tau < margin:
        raise InvalidParameter(f"tau must satisfy 0 < tau < margin, got tau={tau}, margin={margin}")
    if require_continuous and not f.is_continuous:
        raise ContinuityRequired(f"{f.name} is not continuous")

    lower, upper = np.asarray(K.lower, dtype=float), np.asarray(K.upper, dtype=float)

    def density(pts):
        nearest = np.clip(pts, lower, upper)
        distance = np.linalg.norm(pts - nearest, axis=1)
        return smoothstep((margin - distance) / tau) * f.density(pts)

    r = float(np.max(np.linalg.norm(K.corners(), axis=1))) + margin
    outer_lo, outer_hi = lower - margin, upper + margin
    breakpoints = []
    for j in range(f.dim):
        kinks = {b for b in f.breakpoints[j] if outer_lo[j] < b < outer_hi[j]}
        kinks |= {outer_lo[j], lower[j] - margin + tau, upper[j] + margin - tau, outer_hi[j]}
        breakpoints.append(tuple(sorted(float(b) for b in kinks)))
    reach = float(max(np.max(np.abs(outer_lo)), np.max(np.abs(outer_hi))))

    h = DensitySpec(
        name=f"truncated({f.name})",
        dim=f.dim,
        density=density,
        support_radius=r,
        continuity_class=f.continuity_class,
        ess_bound=f.ess_bound,
        breakpoints=tuple(breakpoints),
        tail=lambda radius: np.where(np.asarray(radius) >= reach, 0.0, 1.0),
        effective_radius=reach,
    )
    mass = integrate_box(h.pdf, list(outer_lo), list(outer_hi), breakpoints, abs_tol=MASS_TOL)
    mass = float(np.clip(mass, 0.0, 1.0))
    logger.info("Truncated target", target=f.name, r=r, mass=mass, margin=margin, tau=tau)
    return TruncationResult(h=h, r=r, mass=mass, bump_inner=K, bump_width=tau, margin=margin)


def compact_truncation(f: DensitySpec) -> TruncationResult:
    """Truncation of a compactly supported density: h = f."""
    if f.support_radius is None:
        raise InvalidParameter(f"{f.name} has no support radius")
    reach = f.reach
    mass = integrate_box(f.pdf, [-reach] * f.dim, [reach] * f.dim, f.breakpoints, abs_tol=MASS_TOL)
    return TruncationResult(
        h=f,
        r=f.support_radius,
        mass=float(np.clip(mass, 0.0, 1.0)),
        bump_inner=Box.cube(reach, f.dim),
        bump_width=None,
    )


# Bandwidth
def select_bandwidth(
    h,
    g: DensitySpec,
    eps_half: float,
    norm: Union[SupNorm, LpNorm],
    k0: float = 1.0,
    cap: float = 1024.0,
) -> BandwidthChoice:
    """First k in k0, 2k0, 4k0, ... (up to cap) with ||h - g_k * h|| <= eps_half."""
    if not eps_half > 0:
        raise InvalidParameter(f"eps_half must be positive, got {eps_half}")
    if not 0 < k0 <= cap:
        raise InvalidParameter(f"need 0 < k0 <= cap, got k0={k0}, cap={cap}")
    abs_tol = LP_CONV_TOL if norm.kind == "lp" else 1e-8
    trials = []
    k = float(k0)
    while k <= cap * (1.0 + 1e-12):
        measured = norm.measure(h, Mollified(g, k, h, abs_tol=abs_tol))
        trials.append((k, measured))
        logger.debug("Bandwidth trial", k=k, measured=measured, target=eps_half)
        if measured <= eps_half:
            logger.info("Bandwidth accepted", k=k, measured=measured, trials=len(trials))
            return BandwidthChoice(k=k, measured=measured, trials=trials)
        k *= 2.0
    last_k, last_error = trials[-1]
    raise BandwidthNotFound(last_k, last_error)


# Partition
def estimate_cells(r: float, k: float, delta: float, dim: int) -> int:
    per_axis = max(1, math.ceil(2.0 * r * k * math.sqrt(dim) / delta - 1e-12))
    if dim == 1:
        return per_axis
    return max(1, math.ceil(math.pi / 4.0 * (per_axis + 2) ** 2))


def build_partition(r: float, k: float, delta: float, dim: int) -> CellPartition:
    if not (r > 0 and k > 0 and delta > 0):
        raise InvalidParameter(f"r, k and delta must be positive, got r={r}, k={k}, delta={delta}")
    if dim not in (1, 2):
        raise DimensionError(f"cell partitions are built in one or two dimensions, got {dim}")
    radius = r * k
    side = delta / math.sqrt(dim)
    count = max(1, math.ceil(2.0 * radius / side - 1e-12))
    starts = -radius + side * np.arange(count)
    mesh = np.meshgrid(*([starts] * dim), indexing="ij")
    lower = np.stack([m.ravel() for m in mesh], axis=1)
    upper = lower + side

    closest = np.clip(0.0, lower, upper)
    keep = np.linalg.norm(closest, axis=1) <= radius * (1.0 + 1e-12)
    lower, upper, closest = lower[keep], upper[keep], closest[keep]

    reps = (lower + upper) / 2.0
    outside = np.linalg.norm(reps, axis=1) > radius
    if np.any(outside):
        # walk from the cell point nearest the origin toward the center, stop on the sphere
        p0, d = closest[outside], reps[outside] - closest[outside]
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * np.einsum("ij,ij->i", p0, d)
        c = np.einsum("ij,ij->i", p0, p0) - radius * radius
        t = (-b + np.sqrt(np.maximum(b * b - 4.0 * a * c, 0.0))) / (2.0 * a)
        reps[outside] = p0 + np.clip(t, 0.0, 1.0)[:, None] * d
    logger.debug("Partition built", cells=len(lower), side=side, ball_radius=radius)
    return CellPartition(lower=lower, upper=upper, reps=reps, delta=delta, ball_radius=radius, side=side)


# Weights
def _axis_rule(lower: np.ndarray, upper: np.ndarray, breakpoints, order: int):
    edges = interval_edges(lower, upper, np.asarray(breakpoints, dtype=float))
    return composite_rule(edges, 1, order)


def _chunk_weights(h, lower: np.ndarray, upper: np.ndarray, order: int) -> np.ndarray:
    rules = [_axis_rule(lower[:, j], upper[:, j], h.breakpoints[j], order) for j in range(lower.shape[1])]
    if len(rules) == 1:
        nodes, weights = rules[0]
        values = h.pdf(nodes.reshape(-1, 1)).reshape(nodes.shape)
        return np.sum(values * weights, axis=1)
    (n1, w1), (n2, w2) = rules
    rows, m1, m2 = len(lower), n1.shape[1], n2.shape[1]
    y = np.stack(
        [np.broadcast_to(n1[:, :, None], (rows, m1, m2)), np.broadcast_to(n2[:, None, :], (rows, m1, m2))], axis=-1
    )
    values = h.pdf(y.reshape(-1, 2)).reshape(rows, m1, m2)
    return np.einsum("rij,ri,rj->r", values, w1, w2)


def cell_weights(h, lower: np.ndarray, upper: np.ndarray, order: int = 8, n_jobs: int = 1) -> np.ndarray:
    """Integral of h over each x-space box; order-preserving across chunks."""
    chunks = [slice(s, s + CELLS_PER_CHUNK) for s in range(0, len(lower), CELLS_PER_CHUNK)]
    if n_jobs > 1 and len(chunks) > 1:
        parts = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_chunk_weights)(h, lower[c], upper[c], order) for c in chunks
        )
    else:
        parts = [_chunk_weights(h, lower[c], upper[c], order) for c in chunks]
    return np.concatenate(parts) if parts else np.zeros(0)


def _kernel_floor(g: DensitySpec) -> Tuple[float, float]:
    """Smallest s in 1, 2, 4, ... with a positive lattice maximum C_s on the ball."""
    s = 1.0
    for _ in range(KERNEL_BALL_ENLARGEMENTS + 1):
        try:
            return s, ess_sup_on_ball(g, s)
        except ZeroOnBall:
            s *= 2.0
    raise ZeroKernel(f"{g.name} vanishes on every ball up to radius {s / 2.0:g}")


def discretize(
    trunc: TruncationResult,
    g: DensitySpec,
    k: float,
    part: CellPartition,
    eps_tail: float,
    quad_order: int = 8,
    weight_floor: float = 1e-14,
    tail_scope: str = "ball",
    n_jobs: int = 1,
) -> Tuple[Mixture, DiscretizationFragment]:
    """Cell weights c_i = integral of h over cell_i / k, plus the remainder component."""
    if not math.isclose(part.ball_radius, trunc.r * k, rel_tol=1e-12):
        raise InvalidParameter("partition was built for a different r or k")
    if not eps_tail > 0:
        raise InvalidParameter(f"eps_tail must be positive, got {eps_tail}")
    if not 0.0 <= trunc.mass <= 1.0:
        raise InvalidParameter(f"truncated mass {trunc.mass} outside [0, 1]")
    if tail_scope not in ("ball", "global"):
        raise InvalidParameter(f"unknown tail scope {tail_scope!r}")
    dim = part.dim

    weights = cell_weights(trunc.h, part.lower / k, part.upper / k, quad_order, n_jobs)
    keep = weights >= weight_floor
    kept = weights[keep]
    locations = part.reps[keep] / k
    c_m = 1.0 - math.fsum(kept)
    if c_m < -QUADRATURE_OVERSHOOT:
        raise QuadratureInconsistency(f"cell weights sum to {1.0 - c_m!r}, above 1")

    scales = np.full(len(kept), 1.0 / k)
    k_m = C_s = s = None
    if c_m <= weight_floor:
        kept = kept / math.fsum(kept)
        c_m = 0.0
    else:
        if tail_scope == "global":
            if g.ess_bound is None:
                raise EssBoundRequired(f"{g.name} has no essential bound")
            if not g.is_continuous or g.lipschitz is None:
                raise ContinuityRequired(f"{g.name} is not uniformly continuous with a known Lipschitz constant")
            C_s = g.ess_bound
            k_m = (eps_tail / (2.0 * c_m * C_s)) ** (1.0 / dim)
        else:
            s, C_s = _kernel_floor(g)
            k_m = min(s / trunc.r, (eps_tail / (2.0 * c_m * C_s)) ** (1.0 / dim))
        kept = np.append(kept, c_m)
        locations = np.vstack([locations, np.zeros((1, dim))])
        scales = np.append(scales, 1.0 / k_m)

    mixture = Mixture.from_arrays(g, kept, locations, scales)
    fragment = DiscretizationFragment(
        c_m=c_m, k_m=k_m, C_s=C_s, s=s, m=len(mixture), dropped=int(np.count_nonzero(~keep)), tail_scope=tail_scope
    )
    logger.info("Discretized", cells=len(part), m=fragment.m, dropped=fragment.dropped, c_m=c_m, k_m=k_m)
    return mixture, fragment


# Certificate
def _lattice_modulus(g: DensitySpec, radius: float, delta: float, lattice: int) -> float:
    half = min(radius, g.reach)
    size = lattice if g.dim == 1 else min(lattice, LATTICE_CAP_2D)
    axis = np.linspace(-half, half, size)
    # pairs up to ceil(delta/h) + 1 lattice steps apart, so rounding to nodes never shortens a pair
    window = math.ceil(delta / (axis[1] - axis[0])) + 2
    if g.dim == 1:
        values = g.pdf(axis.reshape(-1, 1))
        spread = ndimage.maximum_filter1d(values, window, mode="nearest") - ndimage.minimum_filter1d(
            values, window, mode="nearest"
        )
    else:
        mesh = np.meshgrid(axis, axis, indexing="ij")
        values = g.pdf(np.stack([m.ravel() for m in mesh], axis=1)).reshape(size, size)
        spread = ndimage.maximum_filter(values, size=window, mode="nearest") - ndimage.minimum_filter(
            values, size=window, mode="nearest"
        )
    return MODULUS_SAFETY * float(np.max(spread))


def modulus_of_continuity(g: DensitySpec, radius: float, delta: float, lattice: int = 4096) -> float:
    """Upper estimate of sup |g(x) - g(y)| over x, y in the ball with |x - y| <= delta."""
    if not g.is_continuous:
        raise ContinuityRequired(f"{g.name} is not continuous")
    if not (radius > 0 and delta > 0):
        raise InvalidParameter(f"radius and delta must be positive, got radius={radius}, delta={delta}")
    if g.lipschitz is not None:
        try:
            ceiling = 2.0 * ess_sup_on_ball(g, radius)
        except ZeroOnBall:
            return g.lipschitz * delta
        return min(g.lipschitz * delta, ceiling)
    return _lattice_modulus(g, radius, delta, lattice)


def certified_bound(
    g: DensitySpec,
    r: float,
    k: float,
    delta: float,
    mass: float,
    c_m: float,
    k_m: Optional[float],
    C_s: Optional[float],
    dim: int,
) -> float:
    """w(g, 2rk, delta) k^n mass + c_m k_m^n C_s"""
    if not (r > 0 and k > 0 and delta > 0):
        raise InvalidParameter("r, k and delta must be positive")
    if mass < 0 or c_m < 0:
        raise InvalidParameter("mass and c_m must be nonnegative")
    bound = modulus_of_continuity(g, 2.0 * r * k, delta) * k**dim * mass
    if c_m > 0:
        if k_m is None or C_s is None:
            raise InvalidParameter("a positive remainder needs k_m and C_s")
        bound += c_m * k_m**dim * C_s
    return bound


def grid_slack(f: DensitySpec, mix: Mixture, grid: GridSpec) -> float:
    """Bound on how far |f - h_m| can rise between lattice points."""
    step = float(np.linalg.norm(grid.spacing())) / 2.0
    if f.lipschitz is not None:
        slack = f.lipschitz * step
    else:
        slack = modulus_of_continuity(f, f.reach, step)
    g = mix.kernel
    for scale in np.unique(mix.scales):
        weight = math.fsum(mix.weights[mix.scales == scale])
        slack += weight * scale ** (-mix.dim) * modulus_of_continuity(g, g.reach, step / scale)
    return slack


# Pipelines
@contextlib.contextmanager
def _partial_report(state: Dict[str, Any]):
    """Attach the parameters reached so far to any engine error."""
    try:
        yield state
    except MixtureCraftError as exc:
        if exc.report is None:
            exc.report = dict(state)
        raise


def _check_inputs(f: DensitySpec, g: DensitySpec, eps: float, dim: Optional[int] = None):
    if not eps > 0:
        raise InvalidParameter(f"eps must be positive, got {eps}")
    if f.dim != g.dim or (dim is not None and dim != f.dim):
        raise DimensionError("target, kernel and domain dimensions differ")
    if f.dim > 2:
        raise DimensionError("certified construction supports one or two dimensions")


def _resolve(opts: Optional[ConstructionOptions]) -> Tuple[ConstructionOptions, int, int]:
    opts = opts or ConstructionOptions()
    settings = get_settings()
    return opts, opts.quad_order or settings.quad_order, opts.n_jobs or settings.n_jobs


def _check_budget(r: float, k: float, delta: float, dim: int, opts: ConstructionOptions):
    needed = estimate_cells(r, k, delta, dim)
    if needed > opts.max_components:
        raise BudgetExceeded(delta, needed, opts.max_components)


def _solve_delta(g: DensitySpec, r: float, k: float, mass: float, budget: float, dim: int, max_components: int) -> float:
    """Largest delta (closed form, or by halving) with w(g, 2rk, delta) k^n mass <= budget."""
    diameter = 2.0 * r * k * math.sqrt(dim)
    if mass <= 0:
        return diameter
    if g.lipschitz is not None:
        return min(diameter, budget / (g.lipschitz * k**dim * mass))
    delta = diameter
    for _ in range(60):
        if modulus_of_continuity(g, 2.0 * r * k, delta) * k**dim * mass <= budget:
            return delta
        delta /= 2.0
    raise BudgetExceeded(delta, estimate_cells(r, k, delta, dim), max_components)


def capture_radius(f: DensitySpec, eta: float) -> float:
    """Smallest R in 1, 2, 4, ... whose cube holds all but eta of the mass."""
    R = 1.0
    while True:
        tail = f.tail_mass(R)
        if tail is None:
            return max(R, f.reach)
        if tail <= eta:
            return R
        if R > 2.0**30:
            raise InvalidParameter(f"{f.name} keeps more than {eta:g} of its mass beyond every cube")
        R *= 2.0


@monitored_construction("uniform")
def approximate_uniform(
    f: DensitySpec, g: DensitySpec, K: Box, eps: float, opts: Optional[ConstructionOptions] = None
) -> Tuple[Mixture, ApproxReport]:
    """Mixture within eps of f in sup norm on K."""
    start = time.perf_counter()
    opts, order, jobs = _resolve(opts)
    _check_inputs(f, g, eps, K.dim)
    if not f.is_continuous:
        raise ContinuityRequired(f"target {f.name} is not continuous")
    if not g.is_continuous:
        raise ContinuityRequired(f"kernel {g.name} is not continuous")
    dim = f.dim

    offset = np.asarray(K.lower, dtype=float) if opts.anchor else np.zeros(dim)
    f_local = translate_density(f, -offset)
    K_local = K.shifted(-offset)
    state: Dict[str, Any] = {"mode": "uniform", "eps": eps}
    with _partial_report(state):
        trunc = truncate(f_local, K_local, opts.margin, opts.bump_width)
        state.update(r=trunc.r, mass=trunc.mass)
        grid = GridSpec.over_box(K_local, opts.grid_points_for(dim))
        choice = select_bandwidth(trunc.h, g, eps / 2.0, SupNorm(grid), opts.k0, opts.k_cap)
        k = choice.k
        state.update(k=k, measured_mollification=choice.measured)

        delta = _solve_delta(g, trunc.r, k, trunc.mass, eps / 4.0, dim, opts.max_components)
        state["delta"] = delta
        _check_budget(trunc.r, k, delta, dim, opts)
        part = build_partition(trunc.r, k, delta, dim)
        if len(part) > opts.max_components:
            raise BudgetExceeded(delta, len(part), opts.max_components)

        mix, frag = discretize(trunc, g, k, part, eps / 4.0, order, opts.weight_floor, opts.tail_scope, jobs)
        bound = certified_bound(g, trunc.r, k, delta, trunc.mass, frag.c_m, frag.k_m, frag.C_s, dim)
        measured, where = sup_norm_diff_on_grid(f_local, mix, grid)
        slack = grid_slack(f_local, mix, grid)
        if measured > choice.measured + bound + 2.0 * slack:
            logger.warning(
                "Triangle accounting exceeded", measured=measured, mollification=choice.measured, bound=bound, slack=slack
            )

    if opts.anchor:
        mix = shift_mixture(mix, offset)
    report = ApproxReport(
        mode="uniform",
        eps=eps,
        r=trunc.r,
        k=k,
        delta=delta,
        m=len(mix),
        c_m=frag.c_m,
        k_m=frag.k_m,
        C_s=frag.C_s,
        mass=trunc.mass,
        certified_bound=bound,
        measured_mollification=choice.measured,
        measured_total=measured,
        grid_slack=slack,
        tail_scope=frag.tail_scope,
        grid=GridSpec.over_box(K, grid.points_per_axis),
        elapsed_s=time.perf_counter() - start,
    )
    if measured > eps:
        raise ToleranceNotMet(f"measured sup error {measured:.6g} exceeds eps={eps:g}", report=report.to_document())
    logger.info("Uniform approximation ready", m=report.m, k=k, delta=delta, measured=measured, worst_at=[float(v) for v in where + offset])
    return mix, report


def _check_lp_membership(f: DensitySpec, p: float):
    if f.ess_bound is not None:
        return
    zero = Zero(f.dim)
    norm = lp_norm_diff(f, zero, p, f.reach, lp_tail_bound(f, zero, f.reach, p))
    if not math.isfinite(norm):
        raise InvalidParameter(f"{f.name} does not have a finite L_{p:g} norm")


def _lp_error(a, mix: Mixture, p: float, radius: float) -> float:
    return lp_norm_diff(a, mix, p, radius, lp_tail_bound(a, mix, radius, p))


@monitored_construction("lp")
def approximate_lp(
    f: DensitySpec, g: DensitySpec, p: float, eps: float, opts: Optional[ConstructionOptions] = None
) -> Tuple[Mixture, ApproxReport]:
    """Mixture within eps of f in L_p; the error is verified a posteriori."""
    start = time.perf_counter()
    opts, order, jobs = _resolve(opts)
    if not (p >= 1 and math.isfinite(p)):
        raise InvalidParameter(f"p must be a finite real >= 1, got {p}")
    _check_inputs(f, g, eps)
    if g.ess_bound is None:
        raise EssBoundRequired(f"kernel {g.name} has no essential bound")
    _check_lp_membership(f, p)
    dim = f.dim

    state: Dict[str, Any] = {"mode": "lp", "eps": eps, "p": p}
    with _partial_report(state):
        R = capture_radius(f, opts.eta)
        trunc = truncate(f, Box.cube(R, dim), opts.margin, opts.bump_width, require_continuous=False)
        state.update(r=trunc.r, mass=trunc.mass)
        choice = select_bandwidth(trunc.h, g, eps / 2.0, LpNorm(p), opts.k0, opts.k_cap)
        k = choice.k
        state.update(k=k, measured_mollification=choice.measured)

        mollified = Mollified(g, k, trunc.h, abs_tol=LP_CONV_TOL)
        radius = max(mollified.reach, trunc.r + g.reach / k)
        delta = min(1.0, 2.0 * trunc.r * k * math.sqrt(dim))
        for _ in range(opts.max_delta_halvings + 1):
            state["delta"] = delta
            _check_budget(trunc.r, k, delta, dim, opts)
            part = build_partition(trunc.r, k, delta, dim)
            mix, frag = discretize(trunc, g, k, part, eps / 4.0, order, opts.weight_floor, opts.tail_scope, jobs)
            discretization = _lp_error(mollified, mix, p, radius)
            logger.info("L_p refinement", delta=delta, m=len(mix), error=discretization)
            if discretization <= eps / 4.0:
                break
            delta /= 2.0
        else:
            raise BudgetExceeded(delta, estimate_cells(trunc.r, k, delta, dim), opts.max_components)

        measured = _lp_error(f, mix, p, radius)
        bound = None
        if g.is_continuous:
            bound = certified_bound(g, trunc.r, k, delta, trunc.mass, frag.c_m, frag.k_m, frag.C_s, dim)

    report = ApproxReport(
        mode="lp",
        eps=eps,
        p=p,
        r=trunc.r,
        k=k,
        delta=delta,
        m=len(mix),
        c_m=frag.c_m,
        k_m=frag.k_m,
        C_s=frag.C_s,
        mass=trunc.mass,
        certified_bound=bound,
        measured_mollification=choice.measured,
        measured_total=measured,
        tail_scope=frag.tail_scope,
        elapsed_s=time.perf_counter() - start,
    )
    if measured > eps:
        raise ToleranceNotMet(f"measured L_{p:g} error {measured:.6g} exceeds eps={eps:g}", report=report.to_document())
    return mix, report


def construct_fixed(
    f: DensitySpec,
    g: DensitySpec,
    k: float,
    delta: float,
    K: Optional[Box] = None,
    p: Optional[float] = None,
    opts: Optional[ConstructionOptions] = None,
) -> Tuple[Mixture, ApproxReport]:
    """One construction at a prescribed (k, delta), as used by convergence sweeps.

    The remainder budget is twice the modulus term, so the remainder never
    dominates the certificate.
    """
    start = time.perf_counter()
    opts, order, jobs = _resolve(opts)
    if not (k > 0 and delta > 0):
        raise InvalidParameter(f"k and delta must be positive, got k={k}, delta={delta}")
    if K is not None:
        _check_inputs(f, g, 1.0, K.dim)
        trunc = truncate(f, K, opts.margin, opts.bump_width)
    elif p is not None:
        _check_inputs(f, g, 1.0)
        trunc = truncate(f, Box.cube(capture_radius(f, opts.eta), f.dim), opts.margin, opts.bump_width, require_continuous=False)
    else:
        raise InvalidParameter("give K (uniform) or p (L_p)")
    dim = f.dim

    _check_budget(trunc.r, k, delta, dim, opts)
    part = build_partition(trunc.r, k, delta, dim)
    modulus_term = None
    if g.is_continuous:
        modulus_term = modulus_of_continuity(g, 2.0 * trunc.r * k, delta) * k**dim * trunc.mass
    eps_tail = 2.0 * modulus_term if modulus_term else 1e-12
    mix, frag = discretize(trunc, g, k, part, eps_tail, order, opts.weight_floor, opts.tail_scope, jobs)
    bound = None
    if modulus_term is not None:
        bound = certified_bound(g, trunc.r, k, delta, trunc.mass, frag.c_m, frag.k_m, frag.C_s, dim)

    grid = None
    if K is not None:
        grid = GridSpec.over_box(K, opts.grid_points_for(dim))
        measured = sup_norm_diff_on_grid(f, mix, grid)[0]
    else:
        measured = _lp_error(f, mix, p, trunc.r + g.reach / k)
    report = ApproxReport(
        mode="uniform" if K is not None else "lp",
        p=p,
        r=trunc.r,
        k=k,
        delta=delta,
        m=len(mix),
        c_m=frag.c_m,
        k_m=frag.k_m,
        C_s=frag.C_s,
        mass=trunc.mass,
        certified_bound=bound,
        measured_total=measured,
        tail_scope=frag.tail_scope,
        grid=grid,
        elapsed_s=time.perf_counter() - start,
    )
    return mix, report
