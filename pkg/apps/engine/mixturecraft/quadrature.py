"""Quadrature rules shared by the constructor and the analysis module.

Fixed rules are composite Gauss-Legendre built from ``numpy.polynomial``;
adaptive one-dimensional integrals go through QUADPACK (``scipy.integrate.quad``).
"""
import functools
import math
import warnings
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from .errors import InvalidParameter, QuadratureBudget
from .monitoring import get_logger

logger = get_logger(__name__)

MAX_EVALS_PER_CHUNK = 2_000_000
MAX_QUAD_POINTS = 100
# an estimate this far above tolerance is a failed integration, not roundoff
BUDGET_SLACK = 100.0

PointFunction = Callable[[np.ndarray], np.ndarray]


@functools.lru_cache(maxsize=64)
def gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``order``-point rule on [-1, 1]."""
    if order < 1:
        raise InvalidParameter(f"quadrature order must be positive, got {order}")
    nodes, weights = leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def composite_rule(edges: np.ndarray, subdivisions: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise composite rule.

    ``edges`` has shape (N, E) with sorted rows; every panel between two
    consecutive edges is split into ``subdivisions`` equal subpanels carrying
    an ``order``-point rule. Zero-width panels get zero weight, so rows can be
    padded with repeated edges.
    """
    x, w = gauss_legendre(order)
    edges = np.asarray(edges, dtype=float)
    rows = edges.shape[0]
    left = edges[:, :-1]
    width = (edges[:, 1:] - left) / subdivisions
    sub_left = left[:, :, None] + width[:, :, None] * np.arange(subdivisions)
    half = width[:, :, None, None] / 2.0
    nodes = sub_left[..., None] + half * (x + 1.0)
    weights = np.broadcast_to(half * w, nodes.shape)
    return nodes.reshape(rows, -1), weights.reshape(rows, -1)


def interval_edges(lower: np.ndarray, upper: np.ndarray, breakpoints=None) -> np.ndarray:
    """Sorted panel edges for each row: [lower, interior breakpoints..., upper].

    ``breakpoints`` is either shared (1-D array) or per row (N, B). Empty
    intervals (upper < lower) collapse to a zero-width panel.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.maximum(np.asarray(upper, dtype=float), lower)
    if breakpoints is None or np.size(breakpoints) == 0:
        return np.column_stack([lower, upper])
    bps = np.asarray(breakpoints, dtype=float)
    if bps.ndim == 1:
        bps = np.broadcast_to(bps, (lower.shape[0], bps.shape[0]))
    inside = (bps > lower[:, None]) & (bps < upper[:, None])
    width = int(inside.sum(axis=1).max(initial=0))
    if width == 0:
        return np.column_stack([lower, upper])
    vals = np.sort(np.where(inside, bps, np.inf), axis=1)[:, :width]
    vals = np.where(np.isfinite(vals), vals, upper[:, None])
    return np.column_stack([lower, vals, upper])


def tensor_rule(
    lower: Sequence[float],
    upper: Sequence[float],
    breakpoints: Sequence[Sequence[float]],
    subdivisions: int,
    order: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Tensor-product composite rule over a box, split at per-axis breakpoints."""
    axis_nodes, axis_weights = [], []
    for j, (lo, hi) in enumerate(zip(lower, upper)):
        bps = breakpoints[j] if j < len(breakpoints) else ()
        edges = interval_edges(np.array([lo]), np.array([hi]), np.asarray(bps, dtype=float))
        nodes, weights = composite_rule(edges, subdivisions, order)
        axis_nodes.append(nodes[0])
        axis_weights.append(weights[0])
    node_mesh = np.meshgrid(*axis_nodes, indexing="ij")
    weight_mesh = np.meshgrid(*axis_weights, indexing="ij")
    nodes = np.stack([m.ravel() for m in node_mesh], axis=1)
    weights = functools.reduce(np.multiply, [m.ravel() for m in weight_mesh])
    return nodes, weights


def weighted_sum(func: PointFunction, nodes: np.ndarray, weights: np.ndarray) -> float:
    total = []
    for start in range(0, len(nodes), MAX_EVALS_PER_CHUNK):
        stop = start + MAX_EVALS_PER_CHUNK
        total.append(float(np.dot(func(nodes[start:stop]), weights[start:stop])))
    return math.fsum(total)


def settle_at_cap(change: float, tolerance: float, what: str):
    """Accept a refinement that stopped at its cap only when it is near tolerance."""
    if change > BUDGET_SLACK * tolerance:
        raise QuadratureBudget(f"{what} did not settle below {tolerance:g} (last change {change:.3g})")
    logger.warning("Refinement stopped at cap", what=what, change=change, tolerance=tolerance)


def _quad(func, lo, hi, points, abs_tol, rel_tol, limit) -> Tuple[float, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        result = integrate.quad(
            func,
            lo,
            hi,
            points=points or None,
            epsabs=abs_tol,
            epsrel=rel_tol,
            limit=max(limit, 2 * len(points) + 50),
            full_output=1,
        )
    value, abserr = float(result[0]), float(result[1])
    tol = max(abs_tol, rel_tol * abs(value))
    if len(result) > 3 and abserr > tol:
        if abserr > BUDGET_SLACK * tol:
            raise QuadratureBudget(
                f"adaptive quadrature on [{lo:.6g}, {hi:.6g}] stopped at error {abserr:.3g} (tolerance {tol:.3g})"
            )
        logger.warning("Quadrature tolerance not reached", lower=lo, upper=hi, abserr=abserr, tolerance=tol)
    return value, abserr


def integrate_interval(
    func: Callable[[float], float],
    lower: float,
    upper: float,
    points: Sequence[float] = (),
    abs_tol: float = 1e-8,
    rel_tol: float = 0.0,
    limit: int = 500,
) -> float:
    """Adaptive Gauss-Kronrod integral of a scalar function.

    Breakpoints are passed to QUADPACK; long breakpoint lists are split into
    consecutive groups integrated separately.
    """
    if upper <= lower:
        return 0.0
    inner = sorted({float(p) for p in points if lower < p < upper})
    knots = [float(lower), *inner, float(upper)]
    pieces = []
    for start in range(0, len(knots) - 1, MAX_QUAD_POINTS + 1):
        segment = knots[start : start + MAX_QUAD_POINTS + 2]
        lo, hi = segment[0], segment[-1]
        share = abs_tol * (hi - lo) / (upper - lower)
        value, _ = _quad(func, lo, hi, segment[1:-1], share, rel_tol, limit)
        pieces.append(value)
    return math.fsum(pieces)


def integrate_box(
    func: PointFunction,
    lower: Sequence[float],
    upper: Sequence[float],
    breakpoints: Sequence[Sequence[float]] = (),
    abs_tol: float = 1e-8,
    rel_tol: float = 0.0,
    order: int = 8,
    max_subdivisions: Optional[int] = None,
) -> float:
    """Integral of a vectorized function over an axis-aligned box.

    One dimension uses adaptive QUADPACK; two dimensions use a tensor
    Gauss-Legendre rule, doubling subpanels until successive values agree.
    """
    dim = len(lower)
    if dim == 1:
        bps = breakpoints[0] if breakpoints else ()
        return integrate_interval(
            lambda y: float(func(np.array([[y]]))[0]), lower[0], upper[0], bps, abs_tol, rel_tol
        )
    if dim != 2:
        raise InvalidParameter(f"box quadrature supports one or two dimensions, got {dim}")

    cap = max_subdivisions or 64
    subdivisions = 2
    previous = None
    while True:
        nodes, weights = tensor_rule(lower, upper, breakpoints, subdivisions, order)
        value = weighted_sum(func, nodes, weights)
        if previous is not None:
            change = abs(value - previous)
            if change <= max(abs_tol, rel_tol * abs(value)):
                return value
            if subdivisions >= cap:
                settle_at_cap(change, max(abs_tol, rel_tol * abs(value)), "tensor quadrature")
                return value
        previous = value
        subdivisions *= 2
