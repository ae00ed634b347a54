"""
Convergence-speed comparisons between solver configurations.

Gaps are measured against a reference minimum obtained by extending the best
run to a long horizon.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import csv
import logging

import numpy as np

from ..config import settings
from ..schemas.solver import Algorithm, SolverConfig
from .graph_problem import GraphProblem
from .pgfb_solver import run
from .trace_io import ConvergenceTrace

logger = logging.getLogger(__name__)

# Handle optional matplotlib dependency
try:
    import matplotlib.pyplot as plt
    import matplotlib
    matplotlib.use('Agg')  # Use non-interactive backend
    MATPLOTLIB_AVAILABLE = True
except ImportError:
    MATPLOTLIB_AVAILABLE = False
    plt = None

GAP_FIELDS = ("algo", "iter", "seconds", "objective_gap")
DEFAULT_REL_GAP = 1e-4
DEFAULT_RECOVERY_WINDOW = 50


@dataclass
class RunResult:
    label: str
    config: SolverConfig
    x: np.ndarray
    trace: ConvergenceTrace

    @property
    def final_objective(self) -> float:
        return float(self.trace[-1].objective) if len(self.trace) else float("inf")


@dataclass
class JumpRecovery:
    """Objective behaviour after one reconditioning event."""
    event_iter: int
    pre_jump: float
    peak: float
    recovered_at: Optional[int]
    window: int

    @property
    def recovered(self) -> bool:
        return self.recovered_at is not None and self.recovered_at - self.event_iter <= self.window

    def to_dict(self) -> Dict[str, Any]:
        return {
            "event_iter": self.event_iter,
            "pre_jump": self.pre_jump,
            "peak": self.peak,
            "recovered_at": self.recovered_at,
            "recovered": self.recovered,
        }


@dataclass
class TrendReport:
    """Iterations to a relative gap per configuration, and the resulting verdict."""
    reference: float
    rel_gap: float
    iterations: Dict[str, Optional[int]]
    recoveries: List[JumpRecovery] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """The reconditioned run needs strictly fewer iterations than every other one."""
        ours = self.iterations.get("pgfb-theta")
        if ours is None:
            return False
        others = [n for label, n in self.iterations.items() if label != "pgfb-theta"]
        return all(n is None or ours < n for n in others)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "reference": self.reference,
            "rel_gap": self.rel_gap,
            "iterations": dict(self.iterations),
            "passed": self.passed,
            "recoveries": [r.to_dict() for r in self.recoveries],
        }


def default_configs(
    recond_threshold: float = 1e-3,
    max_iter: Optional[int] = None,
    threads: Optional[int] = None
) -> Dict[str, SolverConfig]:
    """Reconditioned PGFB, PGFB without reconditioning, and PPD."""
    common: Dict[str, Any] = {
        "max_iter": max_iter if max_iter is not None else settings.compare_max_iter,
        "tol": 0.0,
    }
    if threads is not None:
        common["threads"] = threads
    return {
        "pgfb-theta": SolverConfig(algo=Algorithm.PGFB, recond_threshold=recond_threshold, **common),
        "pgfb-0": SolverConfig(algo=Algorithm.PGFB, recond_threshold=0.0, **common),
        "ppd": SolverConfig(algo=Algorithm.PPD, **common),
    }


def run_configs(p: GraphProblem, configs: Dict[str, SolverConfig]) -> Dict[str, RunResult]:
    results = {}
    for label, cfg in configs.items():
        logger.info(f"Comparing {label}")
        x, trace = run(p, cfg)
        results[label] = RunResult(label=label, config=cfg, x=x, trace=trace)
    return results


def reference_minimum(
    p: GraphProblem,
    results: Dict[str, RunResult],
    reference_iter: Optional[int] = None
) -> float:
    """
    Approximate minimum of the objective.

    The run with the lowest final objective is repeated for
    ``reference_iter`` iterations; the reference is the lowest objective seen
    in that run or any of ``results``.
    """
    if not results:
        raise ValueError("reference minimum needs at least one run")
    reference_iter = reference_iter if reference_iter is not None else settings.reference_iter
    best = min(results.values(), key=lambda r: r.final_objective)
    extended_cfg = best.config.model_copy(update={"max_iter": reference_iter, "tol": 0.0})
    _, extended = run(p, extended_cfg)

    candidates = [extended.objectives] + [r.trace.objectives for r in results.values()]
    reference = float(min(np.min(c) for c in candidates if len(c)))
    logger.info(f"Reference minimum {reference:.12g} from {best.label} extended to {reference_iter} iterations")
    return reference


def gap_rows(results: Dict[str, RunResult], reference: float) -> List[Dict[str, Any]]:
    rows = []
    for label, result in results.items():
        for record in result.trace:
            rows.append({
                "algo": label,
                "iter": record.iter,
                "seconds": record.seconds,
                "objective_gap": record.objective - reference,
            })
    return rows


def write_gap_csv(rows: List[Dict[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=GAP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({
                "algo": row["algo"],
                "iter": row["iter"],
                "seconds": repr(float(row["seconds"])),
                "objective_gap": repr(float(row["objective_gap"])),
            })
    logger.info(f"Wrote {len(rows)} gap rows to {path}")
    return path


def iterations_to_gap(trace: ConvergenceTrace, reference: float, rel_gap: float = DEFAULT_REL_GAP) -> Optional[int]:
    """First iteration whose objective is within rel_gap (1 + |reference|), or None."""
    target = rel_gap * (1.0 + abs(reference))
    for record in trace:
        if record.objective - reference <= target:
            return record.iter
    return None


def jump_recovery(trace: ConvergenceTrace, window: int = DEFAULT_RECOVERY_WINDOW) -> List[JumpRecovery]:
    """For every reconditioning, when the objective gets back to its value at the event."""
    recoveries = []
    records = trace.records
    for position, record in enumerate(records):
        if not record.recond:
            continue
        pre_jump = record.objective
        peak = pre_jump
        recovered_at = None
        for later in records[position + 1:]:
            peak = max(peak, later.objective)
            if later.objective <= pre_jump:
                recovered_at = later.iter
                break
        recoveries.append(JumpRecovery(record.iter, pre_jump, peak, recovered_at, window))
    return recoveries


def trend_report(
    p: GraphProblem,
    recond_threshold: float = 1e-3,
    max_iter: Optional[int] = None,
    reference_iter: Optional[int] = None,
    rel_gap: float = DEFAULT_REL_GAP,
    threads: Optional[int] = None
) -> TrendReport:
    """Run the three default configurations and summarize their convergence speed."""
    results = run_configs(p, default_configs(recond_threshold, max_iter, threads))
    reference = reference_minimum(p, results, reference_iter)
    report = TrendReport(
        reference=reference,
        rel_gap=rel_gap,
        iterations={label: iterations_to_gap(r.trace, reference, rel_gap) for label, r in results.items()},
        recoveries=jump_recovery(results["pgfb-theta"].trace),
    )
    logger.info(f"Trend {'passed' if report.passed else 'failed'}: {report.iterations}")
    return report


def plot_gaps(
    results: Dict[str, RunResult],
    reference: float,
    path: Union[str, Path],
    by: str = "iter"
) -> Optional[Path]:
    """
    Log-scale objective gap of every run against iterations or seconds.

    Returns:
        The written path, or None when matplotlib is not installed
    """
    if not MATPLOTLIB_AVAILABLE:
        logger.warning("matplotlib is not installed, skipping the gap plot")
        return None
    if by not in ("iter", "seconds"):
        raise ValueError(f"plot axis must be 'iter' or 'seconds', got {by}")

    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    floor = np.finfo(np.float64).eps * (1.0 + abs(reference))
    for label, result in results.items():
        xs = [getattr(r, by) for r in result.trace]
        gaps = np.maximum(result.trace.objectives - reference, floor)
        ax.semilogy(xs, gaps, label=label)
    ax.set_xlabel("iteration" if by == "iter" else "seconds")
    ax.set_ylabel("objective gap")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Wrote gap plot to {path}")
    return path
