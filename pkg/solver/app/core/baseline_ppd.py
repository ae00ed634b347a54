"""
Diagonally preconditioned primal-dual baseline.

The objective is split as f(x) + g(Kx) with f the quadratic fidelity, g the
plain sum of absolute values and K the sparse operator carrying the total
variation and l1 weights. Step sizes follow the diagonal rule
tau_j = 1 / sum_i |K_ij|^(2 - alpha), sigma_i = 1 / sum_j |K_ij|^alpha.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Tuple
import logging
import math
import time

import numpy as np
from scipy import sparse

from ..schemas.solver import SolverConfig
from .exceptions import NumericalFailure
from .graph_problem import GraphProblem, objective_value
from .trace_io import ConvergenceTrace, TraceRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SplitOperatorK:
    """Rows: one per active edge (+lam at u, -lam at v), then one per active vertex."""
    matrix: sparse.csr_matrix
    matrix_t: sparse.csr_matrix
    num_edge_rows: int
    num_vertex_rows: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def apply_transpose(self, d: np.ndarray) -> np.ndarray:
        return self.matrix_t @ d


def build_k(p: GraphProblem) -> SplitOperatorK:
    """Assemble K from the active edges and vertices of p."""
    active = p.active
    n_edges, n_vertices = len(active.e_plus), len(active.v_plus)
    edges = p.edges[active.e_plus]
    lam = p.lam_d1[active.e_plus]

    edge_rows = np.arange(n_edges)
    rows = np.concatenate([edge_rows, edge_rows, n_edges + np.arange(n_vertices)])
    cols = np.concatenate([edges[:, 0], edges[:, 1], active.v_plus])
    data = np.concatenate([lam, -lam, p.lam_l1[active.v_plus]])

    matrix = sparse.coo_matrix(
        (data, (rows, cols)), shape=(n_edges + n_vertices, p.num_vertices)
    ).tocsr()
    return SplitOperatorK(
        matrix=matrix,
        matrix_t=matrix.T.tocsr(),
        num_edge_rows=n_edges,
        num_vertex_rows=n_vertices,
    )


def _abs_power(matrix: sparse.csr_matrix, exponent: float) -> sparse.csr_matrix:
    out = abs(matrix)
    # Stored entries are nonzero, so a zero exponent keeps the sparsity pattern
    out.data = out.data ** exponent
    return out


def ppd_precond(
    k: SplitOperatorK,
    alpha: float = 1.0,
    tau_fallback: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Diagonal primal and dual step sizes.

    Args:
        k: Split operator
        alpha: Exponent in [0, 2]
        tau_fallback: Per-vertex primal step for columns of K that are zero

    Returns:
        (tau per vertex, sigma per row)
    """
    if not 0.0 <= alpha <= 2.0:
        raise ValueError(f"alpha must lie in [0, 2], got {alpha}")
    column_sums = np.asarray(_abs_power(k.matrix, 2.0 - alpha).sum(axis=0)).ravel()
    row_sums = np.asarray(_abs_power(k.matrix, alpha).sum(axis=1)).ravel()

    zero_columns = column_sums == 0
    if zero_columns.any() and tau_fallback is None:
        raise ValueError(f"column {int(np.flatnonzero(zero_columns)[0])} of K is zero and no fallback is given")

    tau = np.empty(k.shape[1])
    tau[~zero_columns] = 1.0 / column_sums[~zero_columns]
    if zero_columns.any():
        tau[zero_columns] = np.asarray(tau_fallback, dtype=np.float64)[zero_columns]
    if row_sums.size and not np.all(row_sums > 0):
        raise ValueError("K has an empty row")
    sigma = 1.0 / row_sums
    return tau, sigma


def untouched_tau(p: GraphProblem) -> np.ndarray:
    """1 / lam_l2, defined wherever no functional touches the vertex."""
    with np.errstate(divide="ignore"):
        return np.where(p.lam_l2 > 0, 1.0 / np.where(p.lam_l2 > 0, p.lam_l2, 1.0), np.inf)


def ppd_run(
    p: GraphProblem,
    cfg: SolverConfig,
    callback: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None
) -> Tuple[np.ndarray, ConvergenceTrace]:
    """
    Primal-dual iterations with extrapolation 1, from x = y and zero duals.

    Dual: d <- clip(d + sigma K xbar, -1, 1). Primal: the prox of the
    fidelity in the metric 1/tau, then xbar = 2 x_new - x_old.
    ``callback(iteration, x, d)`` is called after every iteration.
    """
    k = build_k(p)
    tau, sigma = ppd_precond(k, cfg.ppd_alpha, untouched_tau(p))
    tau_l2 = tau * p.lam_l2
    shifted_y = tau_l2 * p.y
    denominator = 1.0 + tau_l2

    x = np.array(p.y, dtype=np.float64)
    x_bar = x.copy()
    d = np.zeros(k.shape[0])
    trace = ConvergenceTrace()
    info = np.finfo(np.float64)

    logger.info(
        f"Running ppd on |V|={p.num_vertices} with {k.shape[0]} split rows, "
        f"alpha={cfg.ppd_alpha}, max_iter={cfg.max_iter}"
    )
    start = time.perf_counter()
    for iteration in range(1, cfg.max_iter + 1):
        d = np.clip(d + sigma * k.apply(x_bar), -1.0, 1.0)
        x_new = (x - tau * k.apply_transpose(d) + shifted_y) / denominator
        x_bar = 2.0 * x_new - x

        if not np.all(np.isfinite(x_new)):
            logger.error(f"Non-finite iterate at iteration {iteration}")
            raise NumericalFailure("non-finite iterate", iteration)
        rel = min(
            float(np.linalg.norm(x_new - x)) / max(float(np.linalg.norm(x)), info.tiny), info.max
        )
        x = x_new
        objective = objective_value(p, x)
        if not math.isfinite(objective):
            logger.error(f"Non-finite objective at iteration {iteration}")
            raise NumericalFailure("non-finite objective", iteration)

        trace.append(TraceRecord(
            iter=iteration,
            objective=objective,
            rel_change=rel,
            seconds=time.perf_counter() - start,
        ))
        if callback is not None:
            callback(iteration, x, d)
        if rel <= cfg.tol:
            break

    final = trace[-1].objective if len(trace) else objective_value(p, x)
    logger.info(f"Finished ppd: {len(trace)} iterations, F={final:.12g}")
    return x, trace
