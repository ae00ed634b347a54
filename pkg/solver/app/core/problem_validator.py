"""
Validation of graph problem data before it reaches the solvers.
"""
from typing import Any, List, Optional
from dataclasses import dataclass, field
from enum import Enum
import logging

import numpy as np

logger = logging.getLogger(__name__)

# Maximum number of issues reported per rule; the rest are summarized
MAX_ISSUES_PER_RULE = 20


class ValidationSeverity(str, Enum):
    """Validation issue severity levels."""
    ERROR = "error"      # Critical - the problem is rejected
    WARNING = "warning"  # Accepted, but likely not what the user meant


@dataclass
class ValidationIssue:
    """Represents a data validation issue."""
    severity: ValidationSeverity
    field: str
    message: str
    value: Any = None
    line: Optional[int] = None
    suggestion: Optional[str] = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.field}: {self.message}"


@dataclass
class ValidationResult:
    """Results of problem validation."""
    issues: List[ValidationIssue] = field(default_factory=list)

    @property
    def errors(self) -> List[ValidationIssue]:
        return [i for i in self.issues if i.severity == ValidationSeverity.ERROR]

    @property
    def warnings(self) -> List[ValidationIssue]:
        return [i for i in self.issues if i.severity == ValidationSeverity.WARNING]

    @property
    def is_valid(self) -> bool:
        return not self.errors


class ProblemValidationError(ValueError):
    """Raised when a problem violates one of its invariants."""

    def __init__(self, issues: List[ValidationIssue]):
        self.issues = issues
        shown = "; ".join(str(i) for i in issues[:5])
        more = f" (+{len(issues) - 5} more)" if len(issues) > 5 else ""
        super().__init__(f"invalid problem: {shown}{more}")


class ProblemParseError(ValueError):
    """Raised on a malformed line of a vertex or edge file."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}, line {line}: {message}")


class ProblemValidator:
    """Checks the invariants of a graph problem given as raw arrays."""

    def validate(
        self,
        num_vertices: int,
        edges: np.ndarray,
        y: np.ndarray,
        lam_l2: np.ndarray,
        lam_d1: np.ndarray,
        lam_l1: np.ndarray,
        mu: Optional[np.ndarray] = None,
        nu: Optional[np.ndarray] = None,
        first_line: Optional[int] = None
    ) -> ValidationResult:
        """
        Validate every invariant of a graph problem.

        Args:
            num_vertices: Number of vertices
            edges: (|E|, 2) integer endpoints, any orientation
            y, lam_l2, lam_l1, nu: Per-vertex arrays
            lam_d1, mu: Per-edge arrays
            first_line: When the data comes from a file, line number of the
                first record, used to attach line numbers to issues

        Returns:
            ValidationResult: every issue found
        """
        self._first_line = first_line
        issues: List[ValidationIssue] = []

        issues.extend(self._validate_shapes(num_vertices, edges, y, lam_l2, lam_d1, lam_l1, mu, nu))
        if issues:
            # Shape problems make the remaining checks meaningless
            return ValidationResult(issues)

        issues.extend(self._validate_vertex_values(y, lam_l2, lam_l1, nu))
        issues.extend(self._validate_edges(num_vertices, edges, lam_d1, mu))
        if not any(i.severity == ValidationSeverity.ERROR for i in issues):
            issues.extend(self._validate_coverage(num_vertices, edges, lam_l2, lam_d1, lam_l1))
            issues.extend(self._validate_metrics_data(nu))

        return ValidationResult(issues)

    def _line(self, index: int) -> Optional[int]:
        if self._first_line is None:
            return None
        return self._first_line + int(index)

    def _per_index(
        self,
        mask: np.ndarray,
        severity: ValidationSeverity,
        field_name: str,
        message: str,
        values: Optional[np.ndarray] = None,
        suggestion: Optional[str] = None
    ) -> List[ValidationIssue]:
        """One issue per flagged index, capped at MAX_ISSUES_PER_RULE."""
        issues = []
        flagged = np.flatnonzero(mask)
        for index in flagged[:MAX_ISSUES_PER_RULE]:
            issues.append(ValidationIssue(
                severity=severity,
                field=f"{field_name}[{index}]",
                message=message,
                value=None if values is None else values[index].tolist(),
                line=self._line(index),
                suggestion=suggestion
            ))
        if len(flagged) > MAX_ISSUES_PER_RULE:
            issues.append(ValidationIssue(
                severity=severity,
                field=field_name,
                message=f"{len(flagged) - MAX_ISSUES_PER_RULE} more entries: {message}"
            ))
        return issues

    def _validate_shapes(self, num_vertices, edges, y, lam_l2, lam_d1, lam_l1, mu, nu) -> List[ValidationIssue]:
        issues = []
        if num_vertices < 1:
            issues.append(ValidationIssue(
                severity=ValidationSeverity.ERROR,
                field="num_vertices",
                message="A problem needs at least one vertex",
                value=num_vertices
            ))
            return issues

        for name, arr in (("y", y), ("lam_l2", lam_l2), ("lam_l1", lam_l1), ("nu", nu)):
            if arr is not None and arr.shape != (num_vertices,):
                issues.append(ValidationIssue(
                    severity=ValidationSeverity.ERROR,
                    field=name,
                    message=f"Expected {num_vertices} values, got shape {arr.shape}"
                ))

        if edges.ndim != 2 or edges.shape[1] != 2:
            issues.append(ValidationIssue(
                severity=ValidationSeverity.ERROR,
                field="edges",
                message=f"Edges must be an (|E|, 2) array, got shape {edges.shape}"
            ))
            return issues

        num_edges = edges.shape[0]
        for name, arr in (("lam_d1", lam_d1), ("mu", mu)):
            if arr is not None and arr.shape != (num_edges,):
                issues.append(ValidationIssue(
                    severity=ValidationSeverity.ERROR,
                    field=name,
                    message=f"Expected {num_edges} values, got shape {arr.shape}"
                ))
        return issues

    def _validate_vertex_values(self, y, lam_l2, lam_l1, nu) -> List[ValidationIssue]:
        issues = []
        issues.extend(self._per_index(
            ~np.isfinite(y), ValidationSeverity.ERROR, "y", "Observation must be finite", y,
            suggestion="Encode missing observations as y = 0 with lam_l2 = 0"
        ))
        for name, arr in (("lam_l2", lam_l2), ("lam_l1", lam_l1), ("nu", nu)):
            if arr is None:
                continue
            issues.extend(self._per_index(
                ~np.isfinite(arr) | (arr < 0), ValidationSeverity.ERROR, name,
                "Coefficient must be finite and nonnegative", arr
            ))
        return issues

    def _validate_edges(self, num_vertices, edges, lam_d1, mu) -> List[ValidationIssue]:
        issues = []
        if edges.shape[0] == 0:
            return issues

        out_of_range = (edges < 0).any(axis=1) | (edges >= num_vertices).any(axis=1)
        issues.extend(self._per_index(
            out_of_range, ValidationSeverity.ERROR, "edges",
            f"Endpoint outside [0, {num_vertices})", edges
        ))
        issues.extend(self._per_index(
            edges[:, 0] == edges[:, 1], ValidationSeverity.ERROR, "edges",
            "Self-loop edge", edges
        ))

        if not out_of_range.any():
            lo = np.minimum(edges[:, 0], edges[:, 1]).astype(np.int64)
            hi = np.maximum(edges[:, 0], edges[:, 1]).astype(np.int64)
            keys = lo * num_vertices + hi
            _, first_index = np.unique(keys, return_index=True)
            duplicate = np.ones(len(keys), dtype=bool)
            duplicate[first_index] = False
            issues.extend(self._per_index(
                duplicate, ValidationSeverity.ERROR, "edges",
                "Duplicate undirected edge", edges
            ))

        issues.extend(self._per_index(
            ~np.isfinite(lam_d1) | (lam_d1 < 0), ValidationSeverity.ERROR, "lam_d1",
            "Coefficient must be finite and nonnegative", lam_d1
        ))
        issues.extend(self._per_index(
            np.isfinite(lam_d1) & (lam_d1 == 0), ValidationSeverity.WARNING, "lam_d1",
            "Zero total variation weight, edge is inactive", lam_d1
        ))
        if mu is not None:
            issues.extend(self._per_index(
                ~np.isfinite(mu) | (mu <= 0), ValidationSeverity.ERROR, "mu",
                "Border length must be finite and positive", mu
            ))
        return issues

    def _validate_coverage(self, num_vertices, edges, lam_l2, lam_d1, lam_l1) -> List[ValidationIssue]:
        """Every vertex needs fidelity, an l1 weight or an active incident edge."""
        issues = []
        on_active_edge = np.zeros(num_vertices, dtype=bool)
        active = edges[lam_d1 > 0]
        on_active_edge[active[:, 0]] = True
        on_active_edge[active[:, 1]] = True

        covered = (lam_l2 > 0) | (lam_l1 > 0) | on_active_edge
        issues.extend(self._per_index(
            ~covered, ValidationSeverity.ERROR, "vertices",
            "Uncovered vertex: lam_l2 = lam_l1 = 0 and no incident edge with lam_d1 > 0",
            suggestion="Drop the vertex or give it a positive weight"
        ))

        isolated = covered & (lam_l1 == 0) & ~on_active_edge
        if isolated.any():
            issues.append(ValidationIssue(
                severity=ValidationSeverity.WARNING,
                field="vertices",
                message=f"{int(isolated.sum())} vertices are only constrained by fidelity; their optimum is y",
                value=int(isolated.sum())
            ))
        return issues

    def _validate_metrics_data(self, nu) -> List[ValidationIssue]:
        issues = []
        if nu is not None and not (nu > 0).any():
            issues.append(ValidationIssue(
                severity=ValidationSeverity.WARNING,
                field="nu",
                message="nu is zero everywhere, relative error is undefined",
                suggestion="Provide extensive quantities or drop the nu column"
            ))
        return issues
