"""
Command-line entry point of the graph solver.

    python -m app.main solve   --vertices v.txt --edges e.txt [options]
    python -m app.main synth   --grid 32x32 --vertices v.txt --edges e.txt
    python -m app.main compare --vertices v.txt --edges e.txt --out gaps.csv
    python -m app.main evaluate --vertices v.txt --edges e.txt --solution x.txt

Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical failure.
"""
from typing import Any, Dict, List, Optional, Sequence
import argparse
import logging
import sys

from pydantic import ValidationError

from .config import settings
from .core.benchmark import (
    default_configs,
    gap_rows,
    iterations_to_gap,
    plot_gaps,
    reference_minimum,
    run_configs,
    write_gap_csv,
)
from .core.exceptions import NumericalFailure
from .core.graph_problem import (
    GraphProblem,
    compression_ratio,
    load_problem,
    objective_value,
    relative_error,
    save_problem,
)
from .core.pgfb_solver import run
from .core.problem_validator import ProblemParseError, ProblemValidationError
from .core.synth import generate_grid
from .core.trace_io import read_solution, write_solution
from .schemas.solver import Algorithm, GammaMode, SolverConfig, WeightMode
from .schemas.synth import SynthConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

COMPARE_LABELS = ("pgfb-theta", "pgfb-0", "ppd", "gfb-scalar")


class UsageError(Exception):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got '{text}'")


def _grid_size(text: str) -> Dict[str, int]:
    try:
        width, height = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 32x32, got '{text}'")
    return {"width": width, "height": height}


def _add_problem_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--vertices", required=True, help="Vertex file: vertex y lam_l2 lam_l1 [nu]")
    parser.add_argument("--edges", required=True, help="Edge file: u v lam_d1 [mu]")


def _add_solver_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--algo", choices=[a.value for a in Algorithm], default=Algorithm.PGFB.value)
    parser.add_argument("--rho", type=float, help=f"Relaxation in (0, 2), default {settings.rho}")
    parser.add_argument("--rho-schedule", type=_float_list, help="Per-iteration relaxations, last one repeated")
    parser.add_argument("--delta", type=float, help=f"Step-size cap factor in (0, 1), default {settings.delta}")
    parser.add_argument("--gamma-mode", choices=[m.value for m in GammaMode])
    parser.add_argument("--weight-mode", choices=[m.value for m in WeightMode])
    parser.add_argument("--recond-threshold", type=float, help="Relative change triggering reconditioning, 0 disables")
    parser.add_argument("--recond-divisor", type=float)
    parser.add_argument("--max-reconditionings", type=int)
    parser.add_argument("--recond-fractions", type=_float_list, help="Fractions of max-iter to recondition at")
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--lipschitz-fallback", type=float)
    parser.add_argument("--ppd-alpha", type=float)
    parser.add_argument("--threads", type=int, help=f"Worker threads, default {settings.threads} (PGFB_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgfb", description="Preconditioned generalized forward-backward solver for graph problems")
    parser.add_argument("--log-level", default=settings.log_level, help="Logging level")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Minimize one instance")
    _add_problem_args(solve)
    _add_solver_args(solve)
    solve.add_argument("--trace", help="Write the convergence trace CSV here")
    solve.add_argument("--solution", help="Write the solution vector here")

    synth = commands.add_parser("synth", help="Generate a grid instance")
    synth.add_argument("--grid", type=_grid_size, default={"width": 32, "height": 32}, help="WIDTHxHEIGHT")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--noise", type=float, default=0.3)
    synth.add_argument("--pieces", type=int, default=4)
    synth.add_argument("--zero-frac", type=float, default=0.0)
    synth.add_argument("--tv-weight", type=float, default=1.0)
    synth.add_argument("--l1-weight", type=float, default=1.0)
    synth.add_argument("--heterogeneous", action="store_true", help="Log-normal extensive quantities")
    synth.add_argument("--vertices", required=True, help="Output vertex file")
    synth.add_argument("--edges", required=True, help="Output edge file")

    compare = commands.add_parser("compare", help="Objective gaps of several algorithms")
    _add_problem_args(compare)
    compare.add_argument("--algos", nargs="+", choices=COMPARE_LABELS, default=["pgfb-theta", "pgfb-0", "ppd"])
    compare.add_argument("--recond-threshold", type=float, default=1e-3)
    compare.add_argument("--max-iter", type=int, default=settings.compare_max_iter)
    compare.add_argument("--reference-iter", type=int, default=settings.reference_iter)
    compare.add_argument("--rel-gap", type=float, default=1e-4)
    compare.add_argument("--threads", type=int)
    compare.add_argument("--out", required=True, help="Combined gap CSV")
    compare.add_argument("--plot", help="Write a log-gap chart here (needs matplotlib)")
    compare.add_argument("--plot-axis", choices=["iter", "seconds"], default="iter")

    evaluate = commands.add_parser("evaluate", help="Objective and metrics of a solution file")
    _add_problem_args(evaluate)
    evaluate.add_argument("--solution", required=True)
    return parser


def solver_config_from_args(args: argparse.Namespace) -> SolverConfig:
    """SolverConfig from the flags that were given; the rest keep their defaults."""
    fields = {
        "algo": args.algo,
        "rho": args.rho,
        "rho_schedule": args.rho_schedule,
        "delta": args.delta,
        "gamma_mode": args.gamma_mode,
        "weight_mode": args.weight_mode,
        "recond_threshold": args.recond_threshold,
        "recond_divisor": args.recond_divisor,
        "max_reconditionings": args.max_reconditionings,
        "recond_fractions": args.recond_fractions,
        "max_iter": args.max_iter,
        "tol": args.tol,
        "lipschitz_fallback": args.lipschitz_fallback,
        "ppd_alpha": args.ppd_alpha,
        "threads": args.threads,
    }
    return SolverConfig(**{k: v for k, v in fields.items() if v is not None})


def _emit(values: Dict[str, Any]) -> None:
    for key, value in values.items():
        if isinstance(value, float):
            value = repr(value)
        print(f"{key}={value}")


def _metrics(p: GraphProblem, x) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    if p.mu is not None:
        out["compression_ratio"] = compression_ratio(p, x)
    if p.nu is not None:
        try:
            out["relative_error"] = relative_error(p, x)
        except ValueError as e:
            logger.warning(f"Relative error not reported: {e}")
            out["relative_error"] = "undefined"
    return out


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = solver_config_from_args(args)
    p = load_problem(args.vertices, args.edges)
    x, trace = run(p, cfg)

    if args.solution:
        write_solution(x, args.solution)
    if args.trace:
        trace.to_csv(args.trace)

    values: Dict[str, Any] = {
        "algo": cfg.algo.value,
        "iterations": len(trace),
        "objective": objective_value(p, x),
        "seconds": trace[-1].seconds if len(trace) else 0.0,
        "reconditionings": len(trace.recond_iterations),
    }
    values.update(_metrics(p, x))
    _emit(values)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = SynthConfig(
        **args.grid,
        pieces=args.pieces,
        noise=args.noise,
        zero_frac=args.zero_frac,
        tv_weight=args.tv_weight,
        l1_weight=args.l1_weight,
        heterogeneous=args.heterogeneous,
        seed=args.seed,
    )
    p, _ = generate_grid(cfg)
    save_problem(p, args.vertices, args.edges)
    _emit({"vertices": p.num_vertices, "edges": p.num_edges})
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    p = load_problem(args.vertices, args.edges)
    available = default_configs(args.recond_threshold, args.max_iter, args.threads)
    available["gfb-scalar"] = available["pgfb-0"].model_copy(update={"algo": Algorithm.GFB_SCALAR})
    configs = {label: available[label] for label in dict.fromkeys(args.algos)}

    results = run_configs(p, configs)
    reference = reference_minimum(p, results, args.reference_iter)
    write_gap_csv(gap_rows(results, reference), args.out)
    if args.plot:
        plot_gaps(results, reference, args.plot, by=args.plot_axis)

    values: Dict[str, Any] = {"reference": reference}
    for label, result in results.items():
        reached = iterations_to_gap(result.trace, reference, args.rel_gap)
        values[f"{label}.iterations_to_gap"] = "none" if reached is None else reached
        values[f"{label}.final_gap"] = result.final_objective - reference
    _emit(values)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    p = load_problem(args.vertices, args.edges)
    x = read_solution(args.solution, p.num_vertices)
    values: Dict[str, Any] = {"objective": objective_value(p, x)}
    values.update(_metrics(p, x))
    _emit(values)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "synth": cmd_synth,
    "compare": cmd_compare,
    "evaluate": cmd_evaluate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO))

    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ProblemParseError, ProblemValidationError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
