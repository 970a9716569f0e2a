"""Convolution oracle, norm estimators, property checks and convergence sweeps."""
import io
import math
import time
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .densities import DensitySpec, as_points, as_vector, ess_sup_on_ball
from .errors import DimensionError, InvalidParameter, MixtureCraftError, QuadratureBudget
from .monitoring import get_logger
from .quadrature import (
    MAX_EVALS_PER_CHUNK,
    composite_rule,
    integrate_box,
    integrate_interval,
    interval_edges,
    settle_at_cap,
)
from .schemas import Box, ConstructionOptions, GridSpec, SweepRow

logger = get_logger(__name__)

CONV_ORDER = 8
CONV_START_SUBDIVISIONS = 4
CONV_MAX_SUBDIVISIONS = {1: 1024, 2: 64}
YOUNG_SLACK = 1e-6


class Zero:
    """The zero function on R^n."""

    def __init__(self, dim: int):
        self.dim = dim
        self.breakpoints = tuple(() for _ in range(dim))
        self.reach = 0.0
        self.ess_bound = 0.0

    def pdf(self, points) -> np.ndarray:
        return np.zeros(len(as_points(points, self.dim)))

    def tail_mass(self, radius) -> float:
        return 0.0

    def lp_tail(self, radius: float, p: float) -> float:
        return 0.0


# Convolution
def _axis_edges(g: DensitySpec, k: float, h, x: np.ndarray, bound: float, width: float, axis: int) -> np.ndarray:
    lower = np.maximum(-bound, x - width)
    upper = np.minimum(bound, x + width)
    candidates = [np.broadcast_to(np.asarray(h.breakpoints[axis], dtype=float), (len(x), len(h.breakpoints[axis])))]
    kinks = np.asarray(g.breakpoints[axis], dtype=float)
    if kinks.size:
        candidates.append(x[:, None] - kinks[None, :] / k)
    return interval_edges(lower, upper, np.concatenate(candidates, axis=1))


def _convolution_sums(g: DensitySpec, k: float, h, x: np.ndarray, edges: List[np.ndarray], subdivisions: int) -> np.ndarray:
    dim = x.shape[1]
    rules = [composite_rule(e, subdivisions, CONV_ORDER) for e in edges]
    scale = k**dim
    if dim == 1:
        nodes, weights = rules[0]
        y = nodes.reshape(-1, 1)
        kernel = g.pdf(k * (x - nodes).reshape(-1, 1)).reshape(nodes.shape)
        return np.sum(scale * kernel * h.pdf(y).reshape(nodes.shape) * weights, axis=1)
    (n1, w1), (n2, w2) = rules
    rows, m1, m2 = len(x), n1.shape[1], n2.shape[1]
    y = np.stack(
        [np.broadcast_to(n1[:, :, None], (rows, m1, m2)), np.broadcast_to(n2[:, None, :], (rows, m1, m2))], axis=-1
    ).reshape(-1, 2)
    shifted = (np.repeat(x, m1 * m2, axis=0) - y) * k
    values = (scale * g.pdf(shifted) * h.pdf(y)).reshape(rows, m1, m2)
    return np.einsum("rij,ri,rj->r", values, w1, w2)


def convolve(g: DensitySpec, k: float, h, points, abs_tol: float = 1e-8, radius: Optional[float] = None) -> np.ndarray:
    """(g_k * h)(x) at every point, integrating over the cube [-r, r]^n that carries h.

    Panels are split at the kinks of h and at the shifted kinks of g_k, then
    refined by doubling until two successive composite rules agree to abs_tol.
    """
    if not k > 0:
        raise InvalidParameter(f"bandwidth k must be positive, got {k}")
    if g.dim != h.dim:
        raise DimensionError(f"kernel dimension {g.dim} != function dimension {h.dim}")
    dim = h.dim
    if dim > 2:
        raise DimensionError("convolution is available in one or two dimensions")
    pts = as_points(points, dim)
    bound = h.reach if radius is None else float(radius)
    width = g.reach / k
    cap = CONV_MAX_SUBDIVISIONS[dim]
    out = np.zeros(len(pts))

    edges = [_axis_edges(g, k, h, pts[:, j], bound, width, j) for j in range(dim)]
    active = np.arange(len(pts))
    subdivisions = CONV_START_SUBDIVISIONS
    previous = _chunked_sums(g, k, h, pts, edges, subdivisions)
    while active.size:
        subdivisions *= 2
        current = _chunked_sums(g, k, h, pts[active], [e[active] for e in edges], subdivisions)
        done = np.abs(current - previous) <= abs_tol
        out[active] = current
        if subdivisions >= cap and not np.all(done):
            change = float(np.max(np.abs(current - previous)[~done]))
            if dim == 1:
                raise QuadratureBudget(f"convolution did not settle below {abs_tol:g} (last change {change:.3g})")
            settle_at_cap(change, abs_tol, "convolution")
            break
        active, previous = active[~done], current[~done]
    return out


def _chunked_sums(g, k, h, x, edges, subdivisions) -> np.ndarray:
    per_row = 1
    for e in edges:
        per_row *= (e.shape[1] - 1) * subdivisions * CONV_ORDER
    step = max(1, MAX_EVALS_PER_CHUNK // per_row)
    out = np.empty(len(x))
    for start in range(0, len(x), step):
        block = slice(start, start + step)
        out[block] = _convolution_sums(g, k, h, x[block], [e[block] for e in edges], subdivisions)
    return out


def convolve_at(g: DensitySpec, k: float, h, x, radius: Optional[float] = None, abs_tol: float = 1e-8) -> float:
    """Single-point convolution; adaptive Gauss-Kronrod in one dimension."""
    point = as_vector(x, h.dim)
    if h.dim != 1:
        return float(convolve(g, k, h, point.reshape(1, -1), abs_tol=abs_tol, radius=radius)[0])
    if not k > 0:
        raise InvalidParameter(f"bandwidth k must be positive, got {k}")
    bound = h.reach if radius is None else float(radius)
    width = g.reach / k
    x0 = float(point[0])
    lower, upper = max(-bound, x0 - width), min(bound, x0 + width)
    kinks = list(h.breakpoints[0]) + [x0 - kappa / k for kappa in g.breakpoints[0]]

    def integrand(y: float) -> float:
        return float(k * g.pdf(np.array([[k * (x0 - y)]]))[0] * h.pdf(np.array([[y]]))[0])

    return integrate_interval(integrand, lower, upper, kinks, abs_tol=abs_tol)


class Mollified:
    """g_k * h as an evaluable function."""

    CACHE_SIZE = 32

    def __init__(self, g: DensitySpec, k: float, h, abs_tol: float = 1e-8, radius: Optional[float] = None):
        if g.dim != h.dim:
            raise DimensionError(f"kernel dimension {g.dim} != function dimension {h.dim}")
        self.g, self.k, self.h = g, float(k), h
        self.dim = h.dim
        self.abs_tol = abs_tol
        self.radius = radius
        self._cache: Dict[bytes, np.ndarray] = {}

    def pdf(self, points) -> np.ndarray:
        pts = as_points(points, self.dim)
        if len(pts) < 2:
            return convolve(self.g, self.k, self.h, pts, self.abs_tol, self.radius)
        key = pts.tobytes()
        values = self._cache.get(key)
        if values is None:
            values = convolve(self.g, self.k, self.h, pts, self.abs_tol, self.radius)
            if len(self._cache) < self.CACHE_SIZE:
                self._cache[key] = values
        return values.copy()

    @property
    def breakpoints(self) -> Tuple[Tuple[float, ...], ...]:
        axes = []
        for hb, gb in zip(self.h.breakpoints, self.g.breakpoints):
            if hb and gb:
                axes.append(tuple(sorted({b + kappa / self.k for b in hb for kappa in gb})))
            else:
                axes.append(())
        return tuple(axes)

    @property
    def reach(self) -> float:
        inner = self.h.reach if self.radius is None else self.radius
        return inner + self.g.reach / self.k

    @property
    def ess_bound(self) -> Optional[float]:
        return getattr(self.h, "ess_bound", None)

    def tail_mass(self, radius: float) -> float:
        inner = self.h.reach if self.radius is None else self.radius
        if radius <= inner:
            return 1.0
        inner_tail = self.h.tail_mass(inner) or 0.0
        outer_tail = self.g.tail_mass(self.k * (radius - inner))
        return float(min(1.0, inner_tail + (1.0 if outer_tail is None else outer_tail)))

    def lp_tail(self, radius: float, p: float) -> Optional[float]:
        mass = self.tail_mass(radius)
        if mass == 0.0 or p == 1:
            return mass
        if self.ess_bound is None:
            return None
        return (self.ess_bound ** (p - 1) * mass) ** (1.0 / p)


def dilation_tail_mass(g: DensitySpec, k: float, t: float) -> float:
    """Mass of the dilate g_k outside [-t, t]^n; tends to 0 as k grows."""
    if not (k > 0 and t > 0):
        raise InvalidParameter("k and t must be positive")
    mass = g.tail_mass(k * t)
    if mass is None:
        raise InvalidParameter(f"{g.name} carries no tail information")
    return float(mass)


# Norms
def sup_norm_diff_on_grid(a, b, grid: GridSpec, ball_radius: Optional[float] = None) -> Tuple[float, np.ndarray]:
    """max |a - b| over the lattice and the first (lexicographically lowest) maximizer."""
    if grid.dim != a.dim or grid.dim != b.dim:
        raise DimensionError(f"grid dimension {grid.dim} does not match the functions")
    pts = grid.points()
    if ball_radius is not None:
        pts = pts[np.linalg.norm(pts, axis=1) <= ball_radius * (1.0 + 1e-12)]
    diff = np.abs(a.pdf(pts) - b.pdf(pts))
    idx = int(np.argmax(diff))
    return float(diff[idx]), pts[idx].copy()


def lp_tail_bound(a, b, radius: float, p: float) -> float:
    """Bound on the integral of |a - b|^p outside [-radius, radius]^n."""
    total = 0.0
    for fn in (a, b):
        tail = fn.lp_tail(radius, p)
        if tail is None:
            if radius >= fn.reach:
                continue
            raise InvalidParameter(f"no L_{p:g} tail bound available beyond {radius:g}")
        total += tail
    return total**p


def _axis_breakpoints(fn, axis: int) -> Tuple[float, ...]:
    axes = getattr(fn, "breakpoints", ())
    return tuple(axes[axis]) if axes else ()


def lp_norm_diff(a, b, p: float, R: float, tail_bound: float, rel_tol: float = 1e-6) -> float:
    """(integral over [-R, R]^n of |a - b|^p + tail_bound)^(1/p)"""
    if not (p >= 1 and math.isfinite(p)):
        raise InvalidParameter(f"p must be a finite real >= 1, got {p}")
    if not R > 0:
        raise InvalidParameter(f"R must be positive, got {R}")
    if tail_bound < 0:
        raise InvalidParameter("tail bound must be nonnegative")
    if a.dim != b.dim:
        raise DimensionError("functions have different dimensions")
    dim = a.dim
    breakpoints = [tuple(sorted(set(_axis_breakpoints(a, j)) | set(_axis_breakpoints(b, j)))) for j in range(dim)]

    def integrand(pts):
        return np.abs(a.pdf(pts) - b.pdf(pts)) ** p

    lower, upper = [-R] * dim, [R] * dim
    integral = integrate_box(integrand, lower, upper, breakpoints, abs_tol=1e-12, rel_tol=rel_tol)
    return float((max(integral, 0.0) + tail_bound) ** (1.0 / p))


@dataclass(frozen=True)
class SupNorm:
    grid: GridSpec
    ball_radius: Optional[float] = None
    kind: str = "sup"

    @classmethod
    def on_ball(cls, r: float, dim: int = 1, points_per_axis: Optional[int] = None) -> "SupNorm":
        points = points_per_axis or (2049 if dim == 1 else 129)
        return cls(GridSpec(center=[0.0] * dim, half_width=[r] * dim, points_per_axis=points), ball_radius=r)

    @classmethod
    def on_box(cls, box: Box, points_per_axis: Optional[int] = None) -> "SupNorm":
        return cls(GridSpec.over_box(box, points_per_axis or (2049 if box.dim == 1 else 65)))

    def measure(self, a, b) -> float:
        return sup_norm_diff_on_grid(a, b, self.grid, self.ball_radius)[0]


@dataclass(frozen=True)
class LpNorm:
    p: float
    radius: Optional[float] = None
    tail_bound: Optional[float] = None
    kind: str = "lp"

    def __post_init__(self):
        if not (self.p >= 1 and math.isfinite(self.p)):
            raise InvalidParameter(f"p must be a finite real >= 1, got {self.p}")

    def measure(self, a, b) -> float:
        R = self.radius if self.radius is not None else max(a.reach, b.reach)
        tail = self.tail_bound if self.tail_bound is not None else lp_tail_bound(a, b, R, self.p)
        return lp_norm_diff(a, b, self.p, R, tail)


# Property checks
@dataclass(frozen=True)
class YoungCheck:
    lhs: float
    rhs: float
    holds: bool
    form: str = "lp"


def _norm_of(fn, p: float, rel_tol: float) -> float:
    R = fn.reach
    return lp_norm_diff(fn, Zero(fn.dim), p, R, lp_tail_bound(fn, Zero(fn.dim), R, p), rel_tol=rel_tol)


def young_inequality_check(f: DensitySpec, g: DensitySpec, p: float, form: str = "lp") -> YoungCheck:
    """Numerically compare the two sides of Young's convolution inequality.

    ``form="lp"``: ||f*g||_p <= ||f||_p ||g||_1.
    ``form="sup"``: ||f*g||_inf <= ||f||_p ||g||_q with 1/p + 1/q = 1.
    """
    if not (p >= 1 and math.isfinite(p)):
        raise InvalidParameter(f"p must be a finite real >= 1, got {p}")
    if f.dim != g.dim:
        raise DimensionError("f and g have different dimensions")
    if f.dim > 1 and f.factors and g.factors:
        # both sides of the inequality factor over the axes of product densities
        axes = [young_inequality_check(fj, gj, p, form) for fj, gj in zip(f.factors, g.factors)]
        lhs, rhs = math.prod(c.lhs for c in axes), math.prod(c.rhs for c in axes)
        holds = lhs <= rhs + YOUNG_SLACK
        logger.debug("Young check", f=f.name, g=g.name, p=p, form=form, lhs=lhs, rhs=rhs, holds=holds, separable=True)
        return YoungCheck(lhs=float(lhs), rhs=float(rhs), holds=bool(holds), form=form)
    conv = Mollified(f, 1.0, g, abs_tol=1e-12)
    zero = Zero(f.dim)
    f_norm = _norm_of(f, p, 1e-9)
    if form == "lp":
        R = conv.reach
        lhs = lp_norm_diff(conv, zero, p, R, lp_tail_bound(conv, zero, R, p), rel_tol=1e-9)
        rhs = f_norm * _norm_of(g, 1.0, 1e-9)
    elif form == "sup":
        points = 2049 if f.dim == 1 else 129
        grid = GridSpec(center=[0.0] * f.dim, half_width=[conv.reach] * f.dim, points_per_axis=points)
        lhs = sup_norm_diff_on_grid(conv, zero, grid)[0]
        if p == 1:
            g_conj = g.ess_bound if g.ess_bound is not None else ess_sup_on_ball(g, g.reach)
        else:
            g_conj = _norm_of(g, p / (p - 1.0), 1e-9)
        rhs = f_norm * g_conj
    else:
        raise InvalidParameter(f"unknown Young form {form!r}")
    holds = lhs <= rhs + YOUNG_SLACK
    logger.debug("Young check", f=f.name, g=g.name, p=p, form=form, lhs=lhs, rhs=rhs, holds=holds)
    return YoungCheck(lhs=float(lhs), rhs=float(rhs), holds=bool(holds), form=form)


# Sweeps
BASE_COLUMNS = ["certified_bound", "measured_sup", "measured_lp", "m", "elapsed_s"]


class SweepTable:
    """Rows of parameter labels with their measured errors."""

    def __init__(self, rows: Sequence[SweepRow]):
        rows = list(rows)
        if not rows:
            raise InvalidParameter("a sweep table needs at least one row")
        keys = list(rows[0].labels)
        if any(list(row.labels) != keys for row in rows):
            raise InvalidParameter("every row must carry the same label keys")
        self.rows = rows
        self.label_keys = keys

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> List[Optional[float]]:
        if name in self.label_keys:
            return [row.labels[name] for row in self.rows]
        return [getattr(row, name) for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        records = []
        for row in self.rows:
            record = dict(row.labels)
            record.update({col: getattr(row, col) for col in BASE_COLUMNS})
            record["error"] = row.error
            records.append(record)
        frame = pd.DataFrame.from_records(records, columns=self.label_keys + BASE_COLUMNS + ["error"])
        frame["m"] = pd.array([row.m for row in self.rows], dtype="Int64")
        if frame["error"].isna().all():
            frame = frame.drop(columns=["error"])
        return frame

    def to_csv(self, path=None) -> str:
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
        text = buffer.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def approximate_identity_curve(f: DensitySpec, g: DensitySpec, norm: Union[SupNorm, LpNorm], ks: Sequence[float]) -> SweepTable:
    """Error ||f - g_k * f|| for each k."""
    ks = [float(k) for k in ks]
    if not ks:
        raise InvalidParameter("ks must be nonempty")
    if any(k <= 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise InvalidParameter("ks must be positive and strictly increasing")
    rows = []
    for k in ks:
        start = time.perf_counter()
        value = norm.measure(f, Mollified(g, k, f))
        rows.append(
            SweepRow(
                labels={"k": k},
                measured_sup=value if norm.kind == "sup" else None,
                measured_lp=value if norm.kind == "lp" else None,
                elapsed_s=time.perf_counter() - start,
            )
        )
        logger.info("Identity curve point", k=k, error=value)
    return SweepTable(rows)


def _setting_pair(setting) -> Tuple[float, float]:
    if isinstance(setting, dict):
        k, delta = setting.get("k"), setting.get("delta")
    else:
        k, delta = setting
    try:
        k, delta = float(k), float(delta)
    except (TypeError, ValueError):
        raise InvalidParameter(f"sweep setting needs numeric k and delta, got {setting!r}") from None
    return k, delta


def convergence_sweep(
    f: DensitySpec,
    g: DensitySpec,
    settings: Iterable,
    K: Optional[Box] = None,
    p: Optional[float] = None,
    opts: Optional[ConstructionOptions] = None,
    n_jobs: Optional[int] = None,
) -> SweepTable:
    """Run the fixed-parameter construction once per (k, delta) setting.

    Failures are recorded in the row's ``error`` column; rows keep input order.
    """
    from .constructor import construct_fixed

    pairs = [_setting_pair(s) for s in settings]
    if not pairs:
        raise InvalidParameter("settings must be nonempty")
    if (K is None) == (p is None):
        raise InvalidParameter("give exactly one of K (uniform sweep) or p (L_p sweep)")
    opts = opts or ConstructionOptions()
    jobs = n_jobs or opts.n_jobs or 1

    def run_row(k: float, delta: float) -> SweepRow:
        start = time.perf_counter()
        labels = {"k": k, "delta": delta}
        try:
            mix, report = construct_fixed(f, g, k, delta, K=K, p=p, opts=opts)
        except MixtureCraftError as exc:
            logger.warning("Sweep row failed", k=k, delta=delta, error=str(exc))
            return SweepRow(labels=labels, elapsed_s=time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}")
        return SweepRow(
            labels=labels,
            certified_bound=report.certified_bound,
            measured_sup=report.measured_total if K is not None else None,
            measured_lp=report.measured_total if p is not None else None,
            m=report.m,
            elapsed_s=time.perf_counter() - start,
        )

    rows = Parallel(n_jobs=jobs, prefer="threads")(delayed(run_row)(k, d) for k, d in pairs)
    return SweepTable(rows)
