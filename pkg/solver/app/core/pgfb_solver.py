"""
Preconditioned generalized forward-backward iteration on the graph splitting.

The splitting has one functional per active edge (acting on R^2), one per
active vertex (acting on R) and a residual zero functional that absorbs the
part of the identity the weights leave uncovered. The scalar mode keeps one
full-space copy per functional and a single step size, which is the
original, unpreconditioned iteration.
"""
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple
import logging
import math
import time

import numpy as np

from ..schemas.solver import Algorithm, SolverConfig
from .exceptions import NumericalFailure
from .graph_problem import DiagonalMetric, GraphProblem, grad_f, lipschitz_metric, objective_value
from .preconditioner import (
    AuxiliaryVariables,
    Preconditioner,
    QuadApprox,
    build_gamma,
    build_weights,
    check_safety_margin,
    cold_start_quad_approx,
    quad_approx,
    recondition,
    step_cap,
)
from .prox_ops import _pair_diff, _soft_threshold
from .trace_io import ConvergenceTrace, TraceRecord

logger = logging.getLogger(__name__)

# Below this many functionals the backward steps run in the calling thread
MIN_BLOCK = 1024

# Full-space copies in scalar mode above which a warning is logged
SCALAR_COPIES_WARNING = 10_000_000

__all__ = [
    "AuxiliaryVariables",
    "ScalarGFBState",
    "SolverState",
    "aggregate",
    "fixed_point_residual",
    "init",
    "run",
    "step",
]


@dataclass(eq=False)
class SolverState:
    """Everything the iteration needs between two steps."""
    problem: GraphProblem
    config: SolverConfig
    L: DiagonalMetric
    qa: QuadApprox
    precond: Preconditioner
    z: AuxiliaryVariables
    x: np.ndarray
    x_prev: Optional[np.ndarray] = None
    k: int = 0
    reconditionings: int = 0
    pool: Optional[ThreadPoolExecutor] = field(default=None, repr=False)

    def __post_init__(self):
        self._cache_coefficients()

    def _cache_coefficients(self) -> None:
        p, precond = self.problem, self.precond
        self.m_edge, self.m_vertex = precond.prox_metric()
        self.lam_edge = p.lam_d1[p.active.e_plus]
        self.lam_vertex = p.lam_l1[p.active.v_plus]

    @property
    def store_residual(self) -> bool:
        return _needs_residual_storage(self.config)

    def replace_preconditioner(self, precond: Preconditioner, qa: QuadApprox, z: AuxiliaryVariables) -> None:
        self.precond, self.qa, self.z = precond, qa, z
        self._cache_coefficients()


@dataclass(eq=False)
class ScalarGFBState:
    """Scalar-metric iteration with full-space auxiliary copies (small instances)."""
    problem: GraphProblem
    config: SolverConfig
    gamma: float
    weight: float
    z: np.ndarray
    x: np.ndarray
    x_prev: Optional[np.ndarray] = None
    k: int = 0
    reconditionings: int = 0


def _needs_residual_storage(cfg: SolverConfig) -> bool:
    rates = cfg.rho_schedule if cfg.rho_schedule is not None else (cfg.rho,)
    return any(r != 1.0 for r in rates)


def _default_z(p: GraphProblem, precond: Preconditioner, store_residual: bool) -> AuxiliaryVariables:
    """Warm start at the observation: every component equals y."""
    z_edge = np.array(p.y[precond.edges], dtype=np.float64).reshape(-1, 2)
    z_vertex = np.array(p.y[precond.vertices], dtype=np.float64)
    support = precond.residual_support
    if store_residual and len(support):
        return AuxiliaryVariables(z_edge, z_vertex, np.array(p.y[support]), support)
    return AuxiliaryVariables(z_edge, z_vertex)


def _check_z0(z0: AuxiliaryVariables, precond: Preconditioner, store_residual: bool) -> AuxiliaryVariables:
    if z0.z_edge.shape != precond.w_edge.shape or z0.z_vertex.shape != precond.w_vertex.shape:
        raise ValueError(
            f"initial auxiliary variables {z0.z_edge.shape}/{z0.z_vertex.shape} do not match "
            f"the active sets {precond.w_edge.shape}/{precond.w_vertex.shape}"
        )
    support = precond.residual_support
    z = z0.copy()
    if store_residual and len(support):
        if z.z_residual is None:
            raise ValueError("initial auxiliary variables lack the residual variable")
        if z.z_residual.shape != support.shape:
            raise ValueError(f"residual variable has shape {z.z_residual.shape}, expected {support.shape}")
        z.residual_support = support
    else:
        z.z_residual, z.residual_support = None, None
    for arr in (z.z_edge, z.z_vertex) + (() if z.z_residual is None else (z.z_residual,)):
        if not np.all(np.isfinite(arr)):
            raise ValueError("initial auxiliary variables contain non-finite values")
    return z


def aggregate(
    precond: Preconditioner,
    z: AuxiliaryVariables,
    residual: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    x = sum_i W_i z_i.

    Args:
        precond: Weights
        z: Auxiliary variables
        residual: Full-length value of the residual variable, used when z
            does not store it

    Returns:
        The aggregated iterate; each coordinate sums its covering functionals
        in ascending order (edges, then vertices, then the residual)
    """
    num_vertices = len(precond.gamma)
    edges, vertices = precond.edges, precond.vertices
    index = np.concatenate([edges[:, 0], edges[:, 1], vertices])
    weighted = np.concatenate([
        precond.w_edge[:, 0] * z.z_edge[:, 0],
        precond.w_edge[:, 1] * z.z_edge[:, 1],
        precond.w_vertex * z.z_vertex,
    ])
    x = np.bincount(index, weights=weighted, minlength=num_vertices).astype(np.float64)

    if z.z_residual is not None:
        x[z.residual_support] += precond.w_residual[z.residual_support] * z.z_residual
    elif residual is not None:
        support = precond.residual_support
        x[support] += precond.w_residual[support] * residual[support]
    return x


def _blocks(n: int, threads: int) -> List[slice]:
    if threads <= 1 or n < 2 * MIN_BLOCK:
        return [slice(0, n)]
    count = min(threads, n // MIN_BLOCK)
    bounds = np.linspace(0, n, count + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _run_blocks(pool: Optional[ThreadPoolExecutor], work: Callable[[slice], None], n: int, threads: int) -> None:
    """Apply an elementwise update over contiguous blocks; writes are disjoint."""
    blocks = _blocks(n, threads)
    if pool is None or len(blocks) == 1:
        for block in blocks:
            work(block)
        return
    # list() propagates worker exceptions
    list(pool.map(work, blocks))


def init(
    p: GraphProblem,
    cfg: SolverConfig,
    z0: Optional[AuxiliaryVariables] = None,
    pool: Optional[ThreadPoolExecutor] = None
):
    """
    Build the initial preconditioner and iterate.

    Args:
        p: Problem
        cfg: Solver configuration (algo pgfb or gfb-scalar)
        z0: Initial auxiliary variables, default y on every component
        pool: Thread pool for the backward steps

    Returns:
        SolverState, or ScalarGFBState for gfb-scalar
    """
    if cfg.algo == Algorithm.GFB_SCALAR:
        if z0 is not None:
            raise ValueError("gfb-scalar starts from full-space copies of y, z0 is not supported")
        return _init_scalar(p, cfg)
    if cfg.algo != Algorithm.PGFB:
        raise ValueError(f"init does not handle algorithm {cfg.algo.value}")

    L = lipschitz_metric(p, cfg.lipschitz_fallback)
    qa = cold_start_quad_approx(p)
    gamma = build_gamma(qa, L, cfg.rho_bar, cfg.delta, cfg.gamma_mode)
    precond = build_weights(gamma, qa, p.active, cfg.weight_mode)
    check_safety_margin(precond, L, cfg.rho_bar)

    store = _needs_residual_storage(cfg)
    z = _default_z(p, precond, store) if z0 is None else _check_z0(z0, precond, store)
    x = aggregate(precond, z, residual=np.asarray(p.y, dtype=np.float64))

    logger.debug(
        f"Initialized pgfb: gamma in [{gamma.min():.3g}, {gamma.max():.3g}], "
        f"auxiliary size {z.size}, residual support {len(precond.residual_support)}"
    )
    return SolverState(problem=p, config=cfg, L=L, qa=qa, precond=precond, z=z, x=x, pool=pool)


def _init_scalar(p: GraphProblem, cfg: SolverConfig) -> ScalarGFBState:
    L = lipschitz_metric(p, cfg.lipschitz_fallback)
    gamma = float(np.min(step_cap(L, cfg.rho_bar, cfg.delta)))
    n = max(p.active.num_functionals, 1)
    if n * p.num_vertices > SCALAR_COPIES_WARNING:
        logger.warning(f"gfb-scalar stores {n} full copies of {p.num_vertices} values")
    z = np.tile(np.asarray(p.y, dtype=np.float64), (n, 1))
    # Each copy equals y, so the mean is y exactly
    x = np.array(p.y, dtype=np.float64)
    return ScalarGFBState(problem=p, config=cfg, gamma=gamma, weight=1.0 / n, z=z, x=x)


def step(state):
    """One full iteration; updates the state in place and returns it."""
    if isinstance(state, ScalarGFBState):
        return _step_scalar(state)

    p, precond, z = state.problem, state.precond, state.z
    rho = state.config.rho_at(state.k)
    x = state.x
    p_vec = 2.0 * x - precond.gamma * (p.lam_l2 * (x - p.y))
    threads = state.config.threads

    u, v = precond.edges[:, 0], precond.edges[:, 1]

    def edge_block(s: slice) -> None:
        r1, r2 = _pair_diff(
            p_vec[u[s]] - z.z_edge[s, 0], p_vec[v[s]] - z.z_edge[s, 1],
            state.lam_edge[s], state.m_edge[s, 0], state.m_edge[s, 1]
        )
        z.z_edge[s, 0] += rho * (r1 - x[u[s]])
        z.z_edge[s, 1] += rho * (r2 - x[v[s]])

    vertices = precond.vertices

    def vertex_block(s: slice) -> None:
        r = _soft_threshold(p_vec[vertices[s]] - z.z_vertex[s], state.lam_vertex[s] / state.m_vertex[s])
        z.z_vertex[s] += rho * (r - x[vertices[s]])

    _run_blocks(state.pool, edge_block, len(u), threads)
    _run_blocks(state.pool, vertex_block, len(vertices), threads)

    forward = p_vec - x
    if z.z_residual is not None:
        z.z_residual = (1.0 - rho) * z.z_residual + rho * forward[z.residual_support]
        x_new = aggregate(precond, z)
    else:
        # Unrelaxed: the zero functional's variable is p - x itself
        x_new = aggregate(precond, z, residual=forward)

    state.x_prev, state.x = x, x_new
    state.k += 1
    if not np.all(np.isfinite(x_new)):
        logger.error(f"Non-finite iterate at iteration {state.k}")
        raise NumericalFailure("non-finite iterate", state.k)
    return state


def _step_scalar(state: ScalarGFBState) -> ScalarGFBState:
    p = state.problem
    rho = state.config.rho_at(state.k)
    x = state.x
    active = p.active
    p_vec = 2.0 * x - state.gamma * (p.lam_l2 * (x - p.y))
    args = p_vec[None, :] - state.z
    resolved = args.copy()
    m = state.weight / state.gamma

    n_edges = len(active.e_plus)
    if n_edges:
        rows = np.arange(n_edges)
        u, v = p.edges[active.e_plus, 0], p.edges[active.e_plus, 1]
        r1, r2 = _pair_diff(args[rows, u], args[rows, v], p.lam_d1[active.e_plus], m, m)
        resolved[rows, u] = r1
        resolved[rows, v] = r2
    if len(active.v_plus):
        rows = n_edges + np.arange(len(active.v_plus))
        cols = active.v_plus
        resolved[rows, cols] = _soft_threshold(args[rows, cols], p.lam_l1[cols] / m)

    state.z += rho * (resolved - x[None, :])
    x_new = state.weight * np.sum(state.z, axis=0)

    state.x_prev, state.x = x, x_new
    state.k += 1
    if not np.all(np.isfinite(x_new)):
        logger.error(f"Non-finite iterate at iteration {state.k}")
        raise NumericalFailure("non-finite iterate", state.k)
    return state


def fixed_point_residual(state) -> float:
    """Relative change of the iterate over the last step, tiny-guarded."""
    if state.k < 1 or state.x_prev is None:
        raise ValueError("fixed point residual needs at least one completed step")
    info = np.finfo(np.float64)
    change = float(np.linalg.norm(state.x - state.x_prev))
    previous = max(float(np.linalg.norm(state.x_prev)), info.tiny)
    with np.errstate(over="ignore"):
        return float(min(change / previous, info.max))


def recondition_state(state: SolverState) -> None:
    """Rebuild the preconditioner at the current iterate and remap z."""
    p, cfg = state.problem, state.config
    qa = quad_approx(p, state.x)
    gamma = build_gamma(qa, state.L, cfg.rho_bar, cfg.delta, cfg.gamma_mode)
    new = build_weights(gamma, qa, p.active, cfg.weight_mode)
    check_safety_margin(new, state.L, cfg.rho_bar)
    z = recondition(state.x, grad_f(p, state.x), state.precond, new, state.z, state.store_residual)
    state.replace_preconditioner(new, qa, z)
    state.reconditionings += 1


def _fraction_iterations(cfg: SolverConfig) -> set:
    return {max(1, int(round(f * cfg.max_iter))) for f in cfg.recond_fractions}


def iterate(state, trace: Optional[ConvergenceTrace] = None) -> Tuple[np.ndarray, ConvergenceTrace]:
    """
    Run steps from an initialized state until the stopping rule holds.

    Stops when the relative change is at most ``tol`` or after ``max_iter``
    steps. Reconditioning happens when the relative change falls below the
    current threshold (which is then divided) or at the scheduled fractions
    of ``max_iter``, at most ``max_reconditionings`` times.
    """
    cfg = state.config
    p = state.problem
    trace = trace if trace is not None else ConvergenceTrace()
    can_recondition = isinstance(state, SolverState)
    theta = cfg.recond_threshold
    scheduled = _fraction_iterations(cfg)
    cap_logged = False
    recond_objective: Optional[float] = None

    start = time.perf_counter()
    while state.k < cfg.max_iter:
        step(state)
        rel = fixed_point_residual(state)
        objective = objective_value(p, state.x)
        if not math.isfinite(objective):
            logger.error(f"Non-finite objective at iteration {state.k}")
            raise NumericalFailure("non-finite objective", state.k)
        if recond_objective is not None:
            if objective > recond_objective:
                logger.warning(
                    f"Objective rose from {recond_objective:.12g} to {objective:.12g} after reconditioning"
                )
            recond_objective = None

        converged = rel <= cfg.tol
        by_threshold = theta > 0 and rel < theta
        by_schedule = state.k in scheduled
        recond = False
        if can_recondition and not converged and (by_threshold or by_schedule):
            if state.reconditionings < cfg.max_reconditionings:
                recondition_state(state)
                recond = True
                recond_objective = objective
                if by_threshold:
                    theta /= cfg.recond_divisor
                logger.info(f"Reconditioned at iteration {state.k} (threshold now {theta:.3g})")
            elif not cap_logged:
                logger.warning(f"Reconditioning cap of {cfg.max_reconditionings} reached at iteration {state.k}")
                cap_logged = True

        trace.append(TraceRecord(
            iter=state.k,
            objective=objective,
            rel_change=rel,
            seconds=time.perf_counter() - start,
            recond=recond,
        ))
        logger.debug(f"iter {state.k}: F={objective:.12g} rel={rel:.3e}")
        if converged:
            break

    return state.x, trace


def run(
    p: GraphProblem,
    cfg: SolverConfig,
    z0: Optional[AuxiliaryVariables] = None
) -> Tuple[np.ndarray, ConvergenceTrace]:
    """
    Minimize the problem with the configured algorithm.

    Args:
        p: Problem
        cfg: Solver configuration
        z0: Initial auxiliary variables (pgfb only)

    Returns:
        Final iterate and its convergence trace
    """
    if cfg.algo == Algorithm.PPD:
        from .baseline_ppd import ppd_run
        return ppd_run(p, cfg)

    logger.info(
        f"Running {cfg.algo.value} on |V|={p.num_vertices}, |E+|={len(p.active.e_plus)}, "
        f"|V+|={len(p.active.v_plus)} with rho={cfg.rho}, max_iter={cfg.max_iter}"
    )
    with ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else nullcontext() as pool:
        state = init(p, cfg, z0, pool)
        x, trace = iterate(state)

    final = trace[-1].objective if len(trace) else objective_value(p, x)
    seconds = trace[-1].seconds if len(trace) else 0.0
    logger.info(f"Finished {cfg.algo.value}: {len(trace)} iterations, F={final:.12g}, {seconds:.3f}s")
    return x, trace

