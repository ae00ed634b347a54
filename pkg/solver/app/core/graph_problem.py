"""
Graph-structured optimization instance: data model, objective and metrics.

The objective is

    F(x) = 1/2 sum_v lam_l2[v] (x_v - y_v)^2
           + sum_(u,v) lam_d1[uv] |x_u - x_v|
           + sum_v lam_l1[v] |x_v|

split into the smooth fidelity f (first sum) and one simple functional per
active edge and per active vertex.
"""
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Tuple, Union
import logging
import math

import numpy as np

from ..config import settings
from .problem_validator import (
    ProblemParseError,
    ProblemValidationError,
    ProblemValidator,
    ValidationResult,
)

logger = logging.getLogger(__name__)

VERTEX_COLUMNS = ("vertex", "y", "lam_l2", "lam_l1", "nu")
EDGE_COLUMNS = ("u", "v", "lam_d1", "mu")


def _frozen(arr: Optional[np.ndarray], dtype=np.float64) -> Optional[np.ndarray]:
    if arr is None:
        return None
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ActiveSets:
    """Indices of the functionals of the splitting.

    e_plus: edges with lam_d1 > 0, v_plus: vertices with lam_l1 > 0,
    isolated: vertices touched by no functional (fidelity only).
    """
    e_plus: np.ndarray
    v_plus: np.ndarray
    isolated: np.ndarray

    @property
    def num_functionals(self) -> int:
        return len(self.e_plus) + len(self.v_plus)


@dataclass(frozen=True, eq=False)
class DiagonalMetric:
    """Strictly positive diagonal operator, stored by its coefficients."""
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = _frozen(self.coeffs)
        if coeffs.ndim != 1:
            raise ValueError("metric coefficients must be a vector")
        if not np.all(np.isfinite(coeffs)) or not np.all(coeffs > 0):
            raise ValueError("metric coefficients must be finite and strictly positive")
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self) -> int:
        return len(self.coeffs)

    def norm(self, x: np.ndarray) -> float:
        """Norm induced by the metric."""
        return float(np.sqrt(np.sum(self.coeffs * x * x)))

    def inner(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.sum(self.coeffs * x * y))


@dataclass(frozen=True, eq=False)
class GraphProblem:
    """Validated instance; arrays are read-only after construction."""
    num_vertices: int
    edges: np.ndarray
    y: np.ndarray
    lam_l2: np.ndarray
    lam_d1: np.ndarray
    lam_l1: np.ndarray
    mu: Optional[np.ndarray] = None
    nu: Optional[np.ndarray] = None
    validation: ValidationResult = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        arrays = {
            "y": _frozen(self.y),
            "lam_l2": _frozen(self.lam_l2),
            "lam_d1": _frozen(self.lam_d1),
            "lam_l1": _frozen(self.lam_l1),
            "mu": _frozen(self.mu),
            "nu": _frozen(self.nu),
        }
        result = ProblemValidator().validate(self.num_vertices, edges, **arrays)
        if not result.is_valid:
            logger.error(f"Rejected problem with {len(result.errors)} errors")
            raise ProblemValidationError(result.errors)

        # Undirected storage with u < v
        normalized = np.sort(edges, axis=1)
        normalized.setflags(write=False)
        object.__setattr__(self, "edges", normalized)
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "validation", result)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def active(self) -> ActiveSets:
        return active_sets(self)

    def check_vector(self, x: np.ndarray) -> np.ndarray:
        """Return x as a float vector, rejecting wrong sizes and non-finite values."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.num_vertices,):
            raise ValueError(f"dimension mismatch: expected ({self.num_vertices},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("vector contains non-finite values")
        return x


def active_sets(p: GraphProblem) -> ActiveSets:
    """Strictly-positive-coefficient subsets, in ascending index order."""
    e_plus = np.flatnonzero(p.lam_d1 > 0)
    v_plus = np.flatnonzero(p.lam_l1 > 0)
    touched = np.zeros(p.num_vertices, dtype=bool)
    touched[p.edges[e_plus].ravel()] = True
    touched[v_plus] = True
    isolated = np.flatnonzero(~touched)
    for arr in (e_plus, v_plus, isolated):
        arr.setflags(write=False)
    return ActiveSets(e_plus=e_plus, v_plus=v_plus, isolated=isolated)


def validate_problem(p: GraphProblem) -> ValidationResult:
    """Re-run validation on a problem, without raising."""
    return ProblemValidator().validate(
        p.num_vertices, p.edges, p.y, p.lam_l2, p.lam_d1, p.lam_l1, p.mu, p.nu
    )


def _parse_table(path: Path, columns: Tuple[str, ...], required: int) -> Tuple[List[str], np.ndarray]:
    """Read a whitespace separated table with a header line."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ProblemParseError(str(path), 1, "empty file, header expected")

    header = lines[0].split()
    if tuple(header) != columns[:len(header)] or len(header) < required:
        raise ProblemParseError(
            str(path), 1, f"header must be '{' '.join(columns[:required])}' optionally followed by "
            f"'{' '.join(columns[required:])}', got '{lines[0]}'"
        )

    rows = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if not fields:
            raise ProblemParseError(str(path), number, "blank line")
        if len(fields) != len(header):
            raise ProblemParseError(str(path), number, f"expected {len(header)} fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as e:
            raise ProblemParseError(str(path), number, f"malformed number ({e})")

    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, data


def _as_index(path: Path, values: np.ndarray, first_line: int) -> np.ndarray:
    bad = np.flatnonzero(values != np.floor(values))
    if len(bad):
        raise ProblemParseError(str(path), first_line + int(bad[0]), "vertex index must be an integer")
    return values.astype(np.int64)


def load_problem(vertex_table: Union[str, Path], edge_table: Union[str, Path]) -> GraphProblem:
    """
    Load and validate a problem from a vertex file and an edge file.

    Args:
        vertex_table: Path of the `vertex y lam_l2 lam_l1 [nu]` file
        edge_table: Path of the `u v lam_d1 [mu]` file

    Returns:
        GraphProblem with its active sets computed
    """
    vertex_table, edge_table = Path(vertex_table), Path(edge_table)
    v_header, v_data = _parse_table(vertex_table, VERTEX_COLUMNS, required=4)
    e_header, e_data = _parse_table(edge_table, EDGE_COLUMNS, required=3)

    ids = _as_index(vertex_table, v_data[:, 0], 2)
    out_of_order = np.flatnonzero(ids != np.arange(len(ids)))
    if len(out_of_order):
        raise ProblemParseError(
            str(vertex_table), 2 + int(out_of_order[0]), "vertex ids must be 0..|V|-1 in order"
        )

    edges = np.column_stack([
        _as_index(edge_table, e_data[:, 0], 2),
        _as_index(edge_table, e_data[:, 1], 2),
    ]) if len(e_data) else np.zeros((0, 2), dtype=np.int64)

    fields = {
        "y": v_data[:, 1],
        "lam_l2": v_data[:, 2],
        "lam_l1": v_data[:, 3],
        "nu": v_data[:, 4] if len(v_header) > 4 else None,
    }
    lam_d1 = e_data[:, 2] if len(e_data) else np.zeros(0)
    mu = e_data[:, 3] if len(e_header) > 3 and len(e_data) else None

    num_vertices = len(ids)
    # Both files start their records on line 2: vertex issues map to the
    # vertex file, edge and lam_d1 issues to the edge file
    result = ProblemValidator().validate(
        num_vertices, edges, fields["y"], fields["lam_l2"], lam_d1, fields["lam_l1"],
        mu, fields["nu"], first_line=2
    )
    if not result.is_valid:
        logger.error(f"Validation failed for {vertex_table} / {edge_table}")
        raise ProblemValidationError(result.errors)

    problem = GraphProblem(
        num_vertices=num_vertices,
        edges=edges,
        y=fields["y"],
        lam_l2=fields["lam_l2"],
        lam_d1=lam_d1,
        lam_l1=fields["lam_l1"],
        mu=mu,
        nu=fields["nu"],
    )
    for issue in problem.validation.warnings:
        logger.warning(str(issue))
    logger.info(
        f"Loaded problem: |V|={problem.num_vertices}, |E|={problem.num_edges}, "
        f"|E+|={len(problem.active.e_plus)}, |V+|={len(problem.active.v_plus)}"
    )
    return problem


def save_problem(
    p: GraphProblem, vertex_table: Union[str, Path], edge_table: Union[str, Path]
) -> Tuple[Path, Path]:
    """Write the vertex and edge files read by load_problem, floats in full precision."""
    vertex_table, edge_table = Path(vertex_table), Path(edge_table)
    v_columns = VERTEX_COLUMNS if p.nu is not None else VERTEX_COLUMNS[:4]
    with open(vertex_table, "w", newline="\n", encoding="utf-8") as handle:
        handle.write(" ".join(v_columns) + "\n")
        for v in range(p.num_vertices):
            row = [str(v), repr(float(p.y[v])), repr(float(p.lam_l2[v])), repr(float(p.lam_l1[v]))]
            if p.nu is not None:
                row.append(repr(float(p.nu[v])))
            handle.write(" ".join(row) + "\n")

    e_columns = EDGE_COLUMNS if p.mu is not None else EDGE_COLUMNS[:3]
    with open(edge_table, "w", newline="\n", encoding="utf-8") as handle:
        handle.write(" ".join(e_columns) + "\n")
        for i, (u, v) in enumerate(p.edges):
            row = [str(int(u)), str(int(v)), repr(float(p.lam_d1[i]))]
            if p.mu is not None:
                row.append(repr(float(p.mu[i])))
            handle.write(" ".join(row) + "\n")

    logger.info(f"Wrote {p.num_vertices} vertices to {vertex_table} and {p.num_edges} edges to {edge_table}")
    return vertex_table, edge_table


def objective_value(p: GraphProblem, x: np.ndarray) -> float:
    """Value of F at x; sums run in ascending index order."""
    x = p.check_vector(x)
    fidelity = 0.5 * np.sum(p.lam_l2 * (x - p.y) ** 2)
    tv = np.sum(p.lam_d1 * np.abs(x[p.edges[:, 0]] - x[p.edges[:, 1]]))
    l1 = np.sum(p.lam_l1 * np.abs(x))
    return float(fidelity + tv + l1)


def grad_f(p: GraphProblem, x: np.ndarray) -> np.ndarray:
    """Gradient of the fidelity term."""
    x = p.check_vector(x)
    return p.lam_l2 * (x - p.y)


def default_lipschitz_fallback(p: GraphProblem) -> float:
    """Mean of the positive fidelity weights, or 1 if there are none."""
    positive = p.lam_l2[p.lam_l2 > 0]
    return float(np.mean(positive)) if len(positive) else 1.0


def lipschitz_metric(p: GraphProblem, fallback: Optional[float] = None) -> DiagonalMetric:
    """
    Diagonal metric L with respect to which grad_f is cocoercive.

    Args:
        p: Problem
        fallback: Coefficient used where lam_l2 = 0; any positive value is valid

    Returns:
        DiagonalMetric with lam_l2 where positive, fallback elsewhere
    """
    if fallback is None:
        fallback = default_lipschitz_fallback(p)
    if not (fallback > 0 and math.isfinite(fallback)):
        raise ValueError(f"lipschitz fallback must be positive, got {fallback}")
    return DiagonalMetric(np.where(p.lam_l2 > 0, p.lam_l2, fallback))


def default_zero_tol(p: GraphProblem) -> float:
    return settings.zero_tol_factor * (float(np.max(np.abs(p.y))) + 1.0)


def compression_ratio(p: GraphProblem, x: np.ndarray, zero_tol: Optional[float] = None) -> float:
    """
    Ratio of the border length of the jumps of y to that of the jumps of x.

    Returns math.inf when x has no jump.
    """
    if p.mu is None:
        raise ValueError("compression ratio needs border lengths (mu)")
    x = p.check_vector(x)
    if zero_tol is None:
        zero_tol = default_zero_tol(p)
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")

    u, v = p.edges[:, 0], p.edges[:, 1]
    numerator = np.sum(p.mu * (np.abs(p.y[u] - p.y[v]) > zero_tol))
    denominator = np.sum(p.mu * (np.abs(x[u] - x[v]) > zero_tol))
    if denominator == 0:
        return math.inf
    return float(numerator / denominator)


def relative_error(p: GraphProblem, x: np.ndarray) -> float:
    """Root nu-weighted square deviation from y, relative to the spread of y."""
    if p.nu is None:
        raise ValueError("relative error needs extensive quantities (nu)")
    x = p.check_vector(x)
    total = np.sum(p.nu)
    if total <= 0:
        raise ValueError("relative error needs sum(nu) > 0")
    y_bar = np.sum(p.nu * p.y) / total
    denominator = np.sqrt(np.sum(p.nu * (p.y - y_bar) ** 2))
    if denominator == 0:
        raise ValueError("relative error undefined: y is constant on the support of nu")
    return float(np.sqrt(np.sum(p.nu * (x - p.y) ** 2)) / denominator)
