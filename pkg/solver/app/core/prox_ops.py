"""
Proximity operators in scalar and diagonal metrics.

All closed forms accept numpy arrays and broadcast elementwise, so the
solvers apply them to every edge or vertex functional at once. The
underscored kernels skip argument checks and are what the iteration loops
call.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .graph_problem import DiagonalMetric

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Oracle search box: centered at x, half-width 2 ||x||_inf + 10
ORACLE_BOX_SCALE = 2.0
ORACLE_BOX_MARGIN = 10.0

# Brackets a few ulps wide cannot shrink further
ZOOM_SPACING_FACTOR = 4.0


def _require_positive(name: str, value: ArrayLike) -> None:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or not np.all(arr > 0):
        raise ValueError(f"{name} must be finite and strictly positive")


def _scalar_or_array(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def _soft_threshold(x: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    # |x| <= threshold maps to 0, ties included
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def _pair_diff(
    x1: np.ndarray, x2: np.ndarray, mu: np.ndarray, m1: np.ndarray, m2: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    total = m1 + m2
    w1 = m1 / total
    w2 = m2 / total
    x_bar = w1 * x1 + w2 * x2
    mu_bar = mu * (1.0 / m1 + 1.0 / m2)
    diff = x1 - x2
    abs_diff = np.abs(diff)
    split = abs_diff > mu_bar
    # Merge branch (including the tie) gives shrink = 0
    shrink = np.where(split, 1.0 - mu_bar / np.where(split, abs_diff, 1.0), 0.0)
    return x_bar + shrink * w2 * diff, x_bar - shrink * w1 * diff


def prox_abs_scaled(x: ArrayLike, lam: ArrayLike, m: ArrayLike) -> ArrayLike:
    """
    Prox of lam*|.| in the metric m, i.e. soft-thresholding at lam/m.

    Args:
        x: Point(s)
        lam: Positive weight(s)
        m: Positive metric coefficient(s)

    Returns:
        Thresholded value(s), same shape as the broadcast inputs
    """
    _require_positive("lam", lam)
    _require_positive("m", m)
    x = np.asarray(x, dtype=np.float64)
    return _scalar_or_array(_soft_threshold(x, np.asarray(lam) / np.asarray(m)))


def prox_pair_diff(
    x1: ArrayLike, x2: ArrayLike, mu: ArrayLike, m1: ArrayLike, m2: ArrayLike
) -> Tuple[ArrayLike, ArrayLike]:
    """
    Prox of mu*|x1 - x2| in the metric diag(m1, m2).

    The pair either merges to its metric-weighted mean or moves towards it
    by mu/m on each side; the weighted mean m1*x1 + m2*x2 is preserved.
    """
    _require_positive("mu", mu)
    _require_positive("m1", m1)
    _require_positive("m2", m2)
    y1, y2 = _pair_diff(
        np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64),
        np.asarray(mu, dtype=np.float64), np.asarray(m1, dtype=np.float64),
        np.asarray(m2, dtype=np.float64)
    )
    return _scalar_or_array(y1), _scalar_or_array(y2)


@dataclass(frozen=True, eq=False)
class SubspaceDescriptor:
    """Coordinate subset spanning S, optionally restricted to zero mean.

    With remove_mean, S is the deviation subspace: vectors supported on the
    subset whose metric-weighted mean over the subset vanishes.
    """
    indices: Tuple[int, ...]
    remove_mean: bool = False

    def __post_init__(self):
        indices = tuple(int(i) for i in self.indices)
        if not indices:
            raise ValueError("subspace needs a non-empty coordinate subset")
        if len(set(indices)) != len(indices):
            raise ValueError("subspace coordinates must be distinct")
        object.__setattr__(self, "indices", indices)


def _group_parts(
    x: np.ndarray, s_basis: SubspaceDescriptor, metric: Optional[DiagonalMetric]
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Subset index array, the M-projection of x onto S there, and its M-norm."""
    if max(s_basis.indices) >= len(x) or min(s_basis.indices) < 0:
        raise ValueError("subspace coordinates out of range")
    if metric is not None and len(metric) != len(x):
        raise ValueError(f"metric has {len(metric)} coefficients for a vector of size {len(x)}")

    idx = np.asarray(s_basis.indices)
    sub = x[idx]
    m = np.ones(len(idx)) if metric is None else metric.coeffs[idx]
    if s_basis.remove_mean:
        projected = sub - np.sum(m * sub) / np.sum(m)
    else:
        projected = sub.copy()
    norm = float(np.sqrt(np.sum(m * projected * projected)))
    return idx, projected, norm


def prox_group_seminorm(
    x: np.ndarray,
    lam: float,
    s_basis: SubspaceDescriptor,
    metric: Optional[DiagonalMetric] = None,
    inplace: bool = False
) -> np.ndarray:
    """
    Prox, in the metric M, of x -> lam * ||P_S x||_M.

    Only the subset coordinates are touched; with ``inplace`` the input
    vector is overwritten. ``metric=None`` stands for the identity.
    """
    _require_positive("lam", lam)
    x = np.asarray(x, dtype=np.float64)
    out = x if inplace else x.copy()
    idx, projected, norm = _group_parts(x, s_basis, metric)
    if norm > lam:
        out[idx] = x[idx] - (lam / norm) * projected
    else:
        out[idx] = x[idx] - projected
    return out


def prox_group_constraint(
    x: np.ndarray,
    lam: float,
    s_basis: SubspaceDescriptor,
    metric: Optional[DiagonalMetric] = None,
    inplace: bool = False
) -> np.ndarray:
    """
    Prox, in the metric M, of the indicator of {x : ||P_S x||_M <= lam}.

    That is the M-projection onto the set; feasible points are returned unchanged.
    """
    _require_positive("lam", lam)
    x = np.asarray(x, dtype=np.float64)
    out = x if inplace else x.copy()
    idx, projected, norm = _group_parts(x, s_basis, metric)
    if norm > lam:
        out[idx] = x[idx] - (1.0 - lam / norm) * projected
    return out


def _zoom_argmin(
    fun: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    points: int,
    tol: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Minimize a batch of 1-D convex functions by successive grid refinement.

    ``fun`` maps an array of shape batch + (points,) to values of the same
    shape. For a convex function the minimizer lies between the grid
    neighbours of the discrete argmin, so each level restricts to them.
    """
    steps = np.linspace(0.0, 1.0, points)
    while True:
        grid = lo[..., None] + (hi - lo)[..., None] * steps
        values = fun(grid)
        best = np.argmin(values, axis=-1)
        best_x = np.take_along_axis(grid, best[..., None], axis=-1)[..., 0]
        best_f = np.take_along_axis(values, best[..., None], axis=-1)[..., 0]
        # Far from the origin the float spacing exceeds tol
        floor = np.maximum(tol, ZOOM_SPACING_FACTOR * np.spacing(np.maximum(np.abs(lo), np.abs(hi))))
        if np.all(hi - lo <= floor):
            return best_x, best_f
        new_lo = np.take_along_axis(grid, np.maximum(best - 1, 0)[..., None], axis=-1)[..., 0]
        new_hi = np.take_along_axis(grid, np.minimum(best + 1, points - 1)[..., None], axis=-1)[..., 0]
        if np.array_equal(new_lo, lo) and np.array_equal(new_hi, hi):
            return best_x, best_f
        lo, hi = new_lo, new_hi


def oracle_prox(
    objective: Callable[..., np.ndarray],
    x: Sequence[float],
    metric: Optional[DiagonalMetric] = None,
    grid_points: int = 2001,
    nested_points: int = 41,
    tol: float = 1e-9
) -> np.ndarray:
    """
    Brute-force prox: argmin_y 1/2 ||x - y||_M^2 + objective(y), for dim <= 2.

    The search box is centered at x with half-width 2||x||_inf + 10. In 1-D
    a grid of ``grid_points`` is refined around its best point until the
    bracket is below ``tol``. In 2-D the objective is minimized over y2 for
    each candidate y1 (a convex function of y1) with nested refinements of
    ``nested_points`` per axis.

    Args:
        objective: Convex function taking one array per coordinate
            (``objective(y1)`` or ``objective(y1, y2)``), broadcasting
        x: Point of dimension 1 or 2
        metric: Diagonal metric, identity when None
        grid_points: Coarse grid size per axis in 1-D
        nested_points: Grid size per axis and level in 2-D
        tol: Absolute tolerance on the minimizer

    Returns:
        The approximate prox as a float array of the same dimension as x
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    dim = x.shape[0]
    if x.ndim != 1 or dim > 2:
        raise ValueError(f"oracle prox supports dimension 1 or 2, got {x.shape}")
    m = np.ones(dim) if metric is None else np.asarray(metric.coeffs, dtype=np.float64)
    if m.shape != (dim,):
        raise ValueError("metric dimension does not match the point")

    half_width = ORACLE_BOX_SCALE * float(np.max(np.abs(x))) + ORACLE_BOX_MARGIN

    if dim == 1:
        def fun1(y1):
            return 0.5 * m[0] * (x[0] - y1) ** 2 + objective(y1)

        y1, _ = _zoom_argmin(
            fun1, np.array(x[0] - half_width), np.array(x[0] + half_width), grid_points, tol
        )
        return np.array([float(y1)])

    def inner(y1):
        # y1 has shape batch + (n,); minimize over y2 for every entry
        y1 = y1[..., None]

        def fun2(y2):
            return 0.5 * m[1] * (x[1] - y2) ** 2 + objective(y1, y2)

        lo = np.full(y1.shape[:-1], x[1] - half_width)
        hi = np.full(y1.shape[:-1], x[1] + half_width)
        y2, value = _zoom_argmin(fun2, lo, hi, nested_points, tol)
        return y2, value + 0.5 * m[0] * (x[0] - y1[..., 0]) ** 2

    y1, _ = _zoom_argmin(
        lambda y: inner(y)[1],
        np.array(x[0] - half_width), np.array(x[0] + half_width), nested_points, tol
    )
    y2, _ = inner(np.array([float(y1)]))
    return np.array([float(y1), float(y2[0])])
