"""
Diagonal preconditioners for the generalized forward-backward splitting.

Gamma (one step size per vertex) and the per-functional weights W_i are
derived from diagonal quadratic approximations of the functionals around an
iterate. Reconditioning rebuilds them at a new iterate and remaps the
auxiliary variables so that the current point stays a candidate fixed point.
"""
from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np

from ..schemas.solver import GammaMode, WeightMode
from .exceptions import NumericalFailure
from .graph_problem import ActiveSets, DiagonalMetric, GraphProblem

logger = logging.getLogger(__name__)

# Keeps the safeguards strictly positive when the iterate vanishes
EPS_FLOOR = 1e-300
EPS_L1_FACTOR = 1e-6
EPS_D1_DIVISOR = 10.0

# Residual weights below this are rounding noise of 1 - sum(w)
RESIDUAL_SNAP = 1e-14


@dataclass(frozen=True, eq=False)
class QuadApprox:
    """Diagonal Hessians of the quadratic approximations at an iterate.

    m_f is the Hessian of the fidelity (lam_l2 per vertex), m_edge holds the
    two endpoint coefficients of each active edge and m_vertex the coefficient
    of each active vertex. ``edges`` and ``vertices`` locate them.
    """
    m_f: np.ndarray
    m_edge: np.ndarray
    m_vertex: np.ndarray
    edges: np.ndarray
    vertices: np.ndarray

    @property
    def num_vertices(self) -> int:
        return len(self.m_f)

    def coordinate_sum(self) -> np.ndarray:
        """Sum over the functionals covering each vertex of their coefficient."""
        return _scatter(self.num_vertices, self.edges, self.vertices, self.m_edge, self.m_vertex)


@dataclass(frozen=True, eq=False)
class Preconditioner:
    """Step sizes and weights; immutable once built."""
    gamma: np.ndarray
    w_edge: np.ndarray
    w_vertex: np.ndarray
    w_residual: np.ndarray
    weight_mode: WeightMode
    edges: np.ndarray
    vertices: np.ndarray

    @property
    def residual_support(self) -> np.ndarray:
        return np.flatnonzero(self.w_residual > 0)

    def weight_sums(self) -> np.ndarray:
        """Per-vertex sum of all weights, residual included."""
        sums = _scatter(len(self.gamma), self.edges, self.vertices, self.w_edge, self.w_vertex)
        return sums + self.w_residual

    def prox_metric(self) -> Tuple[np.ndarray, np.ndarray]:
        """Metric coefficients w/gamma of the edge and vertex backward steps."""
        m_edge = self.w_edge / self.gamma[self.edges]
        m_vertex = self.w_vertex / self.gamma[self.vertices]
        return m_edge, m_vertex


@dataclass(eq=False)
class AuxiliaryVariables:
    """Auxiliary variables of the tight splitting, in embedded coordinates.

    z_edge[i] holds the (u, v) components of the i-th active edge's variable,
    z_vertex[i] that of the i-th active vertex. The residual variable is
    stored only on ``residual_support`` and only when it is needed.
    """
    z_edge: np.ndarray
    z_vertex: np.ndarray
    z_residual: Optional[np.ndarray] = None
    residual_support: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        """Number of stored reals."""
        residual = 0 if self.z_residual is None else len(self.z_residual)
        return self.z_edge.size + self.z_vertex.size + residual

    def copy(self) -> "AuxiliaryVariables":
        return AuxiliaryVariables(
            z_edge=self.z_edge.copy(),
            z_vertex=self.z_vertex.copy(),
            z_residual=None if self.z_residual is None else self.z_residual.copy(),
            residual_support=self.residual_support,
        )


def _scatter(
    num_vertices: int,
    edges: np.ndarray,
    vertices: np.ndarray,
    edge_values: np.ndarray,
    vertex_values: np.ndarray
) -> np.ndarray:
    """Per-vertex sums; contributions are added edges first, in index order."""
    index = np.concatenate([edges[:, 0], edges[:, 1], vertices])
    values = np.concatenate([edge_values[:, 0], edge_values[:, 1], vertex_values])
    return np.bincount(index, weights=values, minlength=num_vertices).astype(np.float64)


def _require_positive_eps(name: str, eps) -> None:
    eps = np.asarray(eps, dtype=np.float64)
    if not np.all(eps > 0) or not np.all(np.isfinite(eps)):
        raise ValueError(f"{name} must be finite and strictly positive")


def quad_approx_vertex(xhat_v, lam_l1_v, eps_l1):
    """Hessian of the l1 term's quadratic approximation: lam / max(|xhat|, eps)."""
    _require_positive_eps("eps_l1", eps_l1)
    return np.asarray(lam_l1_v) / np.maximum(np.abs(np.asarray(xhat_v, dtype=np.float64)), eps_l1)


def quad_approx_edge(xhat_u, xhat_v, lam_d1, eps_d1):
    """Common diagonal coefficient of an edge term: lam / max(|xhat_u - xhat_v|, eps)."""
    _require_positive_eps("eps_d1", eps_d1)
    diff = np.abs(np.asarray(xhat_u, dtype=np.float64) - np.asarray(xhat_v, dtype=np.float64))
    return np.asarray(lam_d1) / np.maximum(diff, eps_d1)


def eps_defaults(xhat: np.ndarray, edge_u: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """
    Safeguards of the quadratic approximations.

    Args:
        xhat: Iterate
        edge_u: First endpoint of each edge

    Returns:
        eps_l1: a millionth of the mean amplitude of xhat (floored)
        eps_d1: per edge, max(|xhat_u| / 10, eps_l1)
    """
    xhat = np.asarray(xhat, dtype=np.float64)
    if xhat.ndim != 1 or len(xhat) == 0:
        raise ValueError("xhat must be a non-empty vector")
    eps_l1 = max(EPS_L1_FACTOR * float(np.mean(np.abs(xhat))), EPS_FLOOR)
    if edge_u is None:
        edge_u = np.zeros(0, dtype=np.int64)
    # First endpoint only, not the difference
    eps_d1 = np.maximum(np.abs(xhat[edge_u]) / EPS_D1_DIVISOR, eps_l1)
    return eps_l1, eps_d1


def quad_approx(p: GraphProblem, xhat: np.ndarray, active: Optional[ActiveSets] = None) -> QuadApprox:
    """Quadratic approximations of every active functional around xhat."""
    xhat = p.check_vector(xhat)
    active = active or p.active
    edges = p.edges[active.e_plus]
    eps_l1, eps_d1 = eps_defaults(xhat, edges[:, 0])

    m_common = quad_approx_edge(xhat[edges[:, 0]], xhat[edges[:, 1]], p.lam_d1[active.e_plus], eps_d1)
    m_vertex = quad_approx_vertex(xhat[active.v_plus], p.lam_l1[active.v_plus], eps_l1)
    return QuadApprox(
        m_f=np.array(p.lam_l2, dtype=np.float64),
        m_edge=np.column_stack([m_common, m_common]).reshape(-1, 2),
        m_vertex=np.asarray(m_vertex, dtype=np.float64),
        edges=edges,
        vertices=np.asarray(active.v_plus),
    )


def cold_start_amplitude(p: GraphProblem) -> float:
    """Mean |y| over observed vertices, 1 when that is empty or zero."""
    observed = np.abs(p.y[p.lam_l2 > 0])
    amplitude = float(np.mean(observed)) if len(observed) else 0.0
    return amplitude if amplitude > 0 else 1.0


def cold_start_quad_approx(p: GraphProblem, active: Optional[ActiveSets] = None) -> QuadApprox:
    """
    Initial approximations, before any iterate is known.

    Every amplitude |x_v| and every difference |x_u - x_v| is replaced by the
    average amplitude of the observations.
    """
    active = active or p.active
    amplitude = cold_start_amplitude(p)
    edges = p.edges[active.e_plus]
    m_common = p.lam_d1[active.e_plus] / amplitude
    return QuadApprox(
        m_f=np.array(p.lam_l2, dtype=np.float64),
        m_edge=np.column_stack([m_common, m_common]).reshape(-1, 2),
        m_vertex=p.lam_l1[active.v_plus] / amplitude,
        edges=edges,
        vertices=np.asarray(active.v_plus),
    )


def step_cap(L: DiagonalMetric, rho_bar: float, delta: float) -> np.ndarray:
    """Largest admissible step per vertex: delta (4 - 2 rho_bar) / l."""
    if not 0.0 < rho_bar < 2.0:
        raise ValueError(f"relaxation supremum must lie in (0, 2), got {rho_bar}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return delta * (4.0 - 2.0 * rho_bar) / L.coeffs


def build_gamma(
    qa: QuadApprox,
    L: DiagonalMetric,
    rho_bar: float,
    delta: float,
    gamma_mode: GammaMode = GammaMode.WHOLE_FUNCTIONAL
) -> np.ndarray:
    """
    Per-vertex step sizes.

    Args:
        qa: Quadratic approximations
        L: Cocoercivity metric of the smooth part
        rho_bar: Supremum of the relaxation sequence
        delta: Safety factor on the step cap
        gamma_mode: SMOOTH_ONLY inverts m_f alone, WHOLE_FUNCTIONAL inverts
            m_f plus every covering functional's coefficient

    Returns:
        gamma: min(cap, 1 / divisor) per vertex
    """
    if len(L) != qa.num_vertices:
        raise ValueError("metric and quadratic approximation sizes differ")
    cap = step_cap(L, rho_bar, delta)

    divisor = qa.m_f.copy()
    if gamma_mode == GammaMode.WHOLE_FUNCTIONAL:
        divisor = divisor + qa.coordinate_sum()

    bad = np.flatnonzero(~(divisor > 0))
    if len(bad):
        what = "fidelity weight" if gamma_mode == GammaMode.SMOOTH_ONLY else "curvature"
        raise ValueError(f"vertex {int(bad[0])} has no positive {what}, step size undefined")

    return np.minimum(cap, 1.0 / divisor)


def build_weights(
    gamma: np.ndarray,
    qa: QuadApprox,
    active: ActiveSets,
    weight_mode: WeightMode = WeightMode.COORDINATE_SCALED
) -> Preconditioner:
    """
    Weights w_ij = gamma_j m_ij normalized per coordinate or per functional.

    COORDINATE_SCALED divides by the coordinate sum s_j, so the functionals
    alone partition the identity. SHAPE_PRESERVING divides each functional
    by the largest s_j over its support, and the remainder goes to the
    residual zero functional. Vertices outside every functional belong to
    the residual functional entirely.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    num_vertices = qa.num_vertices
    if gamma.shape != (num_vertices,) or not np.all(gamma > 0):
        raise ValueError("gamma must be a positive vector over the vertices")

    edges, vertices = qa.edges, qa.vertices
    w_tilde_edge = gamma[edges] * qa.m_edge
    w_tilde_vertex = gamma[vertices] * qa.m_vertex
    s_tilde = _scatter(num_vertices, edges, vertices, w_tilde_edge, w_tilde_vertex)

    covered = np.ones(num_vertices, dtype=bool)
    covered[active.isolated] = False
    bad = np.flatnonzero(covered & ~(np.isfinite(s_tilde) & (s_tilde > 0)))
    if len(bad):
        raise ValueError(f"vertex {int(bad[0])} is covered but its weight sum is {s_tilde[bad[0]]}")

    if weight_mode == WeightMode.COORDINATE_SCALED:
        w_edge = w_tilde_edge / s_tilde[edges]
        w_vertex = w_tilde_vertex / s_tilde[vertices]
        w_residual = np.where(covered, 0.0, 1.0)
    else:
        s_edge = np.max(s_tilde[edges], axis=1) if len(edges) else np.zeros(0)
        w_edge = w_tilde_edge / s_edge[:, None]
        w_vertex = w_tilde_vertex / s_tilde[vertices]
        used = _scatter(num_vertices, edges, vertices, w_edge, w_vertex)
        w_residual = np.maximum(1.0 - used, 0.0)
        w_residual[covered & (w_residual < RESIDUAL_SNAP)] = 0.0
        w_residual[~covered] = 1.0

    precond = Preconditioner(
        gamma=gamma,
        w_edge=w_edge.reshape(-1, 2),
        w_vertex=w_vertex,
        w_residual=w_residual,
        weight_mode=WeightMode(weight_mode),
        edges=edges,
        vertices=vertices,
    )
    for arr in (precond.gamma, precond.w_edge, precond.w_vertex, precond.w_residual):
        arr.setflags(write=False)
    return precond


def check_safety_margin(precond: Preconditioner, L: DiagonalMetric, rho_bar: float) -> float:
    """
    Assert rho_bar < 2 - max(gamma * l) / 2.

    Returns:
        The margin 2 - max(gamma * l) / 2
    """
    margin = 2.0 - 0.5 * float(np.max(precond.gamma * L.coeffs))
    if not rho_bar < margin:
        logger.error(f"Relaxation {rho_bar} violates the step-size margin {margin}")
        raise NumericalFailure(f"relaxation {rho_bar} is not below the step-size margin {margin:.6g}")
    return margin


def _check_compatible(old: Preconditioner, new: Preconditioner, z: AuxiliaryVariables) -> None:
    if not (np.array_equal(old.edges, new.edges) and np.array_equal(old.vertices, new.vertices)):
        raise ValueError("preconditioners are built on different active sets")
    if z.z_edge.shape != old.w_edge.shape or z.z_vertex.shape != old.w_vertex.shape:
        raise ValueError(
            f"auxiliary variables {z.z_edge.shape}/{z.z_vertex.shape} do not match "
            f"the active sets {old.w_edge.shape}/{old.w_vertex.shape}"
        )


def recondition(
    x: np.ndarray,
    bx: np.ndarray,
    old: Preconditioner,
    new: Preconditioner,
    z: AuxiliaryVariables,
    store_residual: Optional[bool] = None
) -> AuxiliaryVariables:
    """
    Remap auxiliary variables from ``old`` to ``new`` at the iterate x.

    Each functional's implied subgradient y_i = (w/gamma)(x - gamma bx - z_i)
    is kept, so ``z_i = (x - gamma' bx) - (gamma'/w') y_i`` under the new
    preconditioner. The residual variable, when stored, restarts at
    x - gamma' bx (its operator is zero).

    Args:
        x: Current iterate, unchanged by reconditioning
        bx: Gradient of the smooth part at x
        old: Preconditioner z was built for
        new: Target preconditioner, on the same active sets
        z: Auxiliary variables under ``old``
        store_residual: Whether the result keeps a residual variable,
            defaults to whether z has one

    Returns:
        New AuxiliaryVariables; z is not modified
    """
    _check_compatible(old, new, z)
    x = np.asarray(x, dtype=np.float64)
    bx = np.asarray(bx, dtype=np.float64)
    if x.shape != old.gamma.shape or bx.shape != old.gamma.shape:
        raise ValueError("x and bx must be vectors over the vertices")

    edges, vertices = old.edges, old.vertices
    forward_old = x - old.gamma * bx
    forward_new = x - new.gamma * bx

    y_edge = (old.w_edge / old.gamma[edges]) * (forward_old[edges] - z.z_edge)
    y_vertex = (old.w_vertex / old.gamma[vertices]) * (forward_old[vertices] - z.z_vertex)

    z_edge = forward_new[edges] - (new.gamma[edges] / new.w_edge) * y_edge
    z_vertex = forward_new[vertices] - (new.gamma[vertices] / new.w_vertex) * y_vertex

    if store_residual is None:
        store_residual = z.z_residual is not None
    support = new.residual_support
    if store_residual and len(support):
        return AuxiliaryVariables(z_edge, z_vertex, forward_new[support], support)
    return AuxiliaryVariables(z_edge, z_vertex)
