"""
Integration tests for the command-line entry point.
"""
import csv

import numpy as np
import pytest

from app.core.trace_io import ConvergenceTrace, read_solution
from app.main import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main


def _parse_output(text):
    values = {}
    for line in text.strip().splitlines():
        key, _, value = line.partition("=")
        values[key] = value
    return values


@pytest.fixture
def two_vertex_files(two_vertex_problem, problem_files):
    vertex_path, edge_path = problem_files(two_vertex_problem)
    return ["--vertices", str(vertex_path), "--edges", str(edge_path)]


@pytest.fixture
def grid_files(tmp_path):
    vertex_path, edge_path = tmp_path / "grid_v.txt", tmp_path / "grid_e.txt"
    code = main([
        "synth", "--grid", "8x8", "--seed", "1", "--heterogeneous",
        "--vertices", str(vertex_path), "--edges", str(edge_path),
    ])
    assert code == EXIT_OK
    return ["--vertices", str(vertex_path), "--edges", str(edge_path)]


@pytest.mark.integration
@pytest.mark.cli
class TestSolveCommand:
    """Test suite for the solve command."""

    def test_solve_writes_solution_and_trace(self, two_vertex_files, tmp_path, capsys):
        """Test a successful run and its output files."""
        solution, trace = tmp_path / "x.txt", tmp_path / "trace.csv"
        code = main(["solve", *two_vertex_files, "--max-iter", "2000", "--tol", "1e-12",
                     "--solution", str(solution), "--trace", str(trace)])
        assert code == EXIT_OK

        values = _parse_output(capsys.readouterr().out)
        assert values["algo"] == "pgfb"
        assert float(values["objective"]) == pytest.approx(3.0, abs=1e-8)
        np.testing.assert_allclose(read_solution(solution, 2), [1.0, 3.0], atol=1e-5)

        loaded = ConvergenceTrace.from_csv(trace)
        assert len(loaded) == int(values["iterations"])
        assert trace.read_text().splitlines()[0] == "iter,objective,rel_change,seconds,recond"

    def test_scalar_mode_agrees_with_pgfb(self, two_vertex_files, tmp_path):
        """Test that gfb-scalar and pgfb reach the same minimizer."""
        solutions = {}
        for algo in ("pgfb", "gfb-scalar", "ppd"):
            path = tmp_path / f"{algo}.txt"
            code = main(["solve", *two_vertex_files, "--algo", algo, "--max-iter", "5000",
                         "--tol", "1e-13", "--solution", str(path)])
            assert code == EXIT_OK
            solutions[algo] = read_solution(path, 2)
        np.testing.assert_allclose(solutions["gfb-scalar"], solutions["pgfb"], atol=1e-5)
        np.testing.assert_allclose(solutions["ppd"], solutions["pgfb"], atol=1e-5)

    def test_reports_metrics(self, grid_files, capsys):
        """Test that compression ratio and relative error are reported."""
        code = main(["solve", *grid_files, "--max-iter", "50", "--recond-threshold", "1e-2"])
        assert code == EXIT_OK
        values = _parse_output(capsys.readouterr().out)
        assert float(values["compression_ratio"]) > 0
        assert float(values["relative_error"]) >= 0

    def test_threads_flag(self, grid_files, tmp_path):
        """Test that the thread count does not change the solution."""
        paths = []
        for threads in ("1", "3"):
            path = tmp_path / f"x{threads}.txt"
            assert main(["solve", *grid_files, "--max-iter", "30", "--threads", threads,
                         "--solution", str(path)]) == EXIT_OK
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()


@pytest.mark.integration
@pytest.mark.cli
class TestExitCodes:
    """Test suite for error reporting."""

    def test_relaxation_out_of_range(self, two_vertex_files):
        """Test that an invalid relaxation is a configuration error."""
        assert main(["solve", *two_vertex_files, "--rho", "2.5"]) == EXIT_USAGE

    def test_unknown_flag(self, two_vertex_files):
        """Test that an unknown flag is a usage error."""
        assert main(["solve", *two_vertex_files, "--bogus"]) == EXIT_USAGE

    def test_missing_command(self):
        """Test that a subcommand is required."""
        assert main([]) == EXIT_USAGE

    def test_missing_file(self, tmp_path):
        """Test that an unreadable file is a data error."""
        assert main(["solve", "--vertices", str(tmp_path / "nope.txt"),
                     "--edges", str(tmp_path / "nope2.txt")]) == EXIT_DATA

    def test_invalid_problem(self, tmp_path, capsys):
        """Test that a self-loop is a data error."""
        vertex_path, edge_path = tmp_path / "v.txt", tmp_path / "e.txt"
        vertex_path.write_text("vertex y lam_l2 lam_l1\n0 0.0 1.0 0.0\n1 1.0 1.0 0.0\n")
        edge_path.write_text("u v lam_d1\n1 1 1.0\n")
        assert main(["solve", "--vertices", str(vertex_path), "--edges", str(edge_path)]) == EXIT_DATA
        assert "Self-loop" in capsys.readouterr().err

    def test_smooth_only_without_fidelity(self, tmp_path):
        """Test that smooth-only step sizes need fidelity everywhere."""
        vertex_path, edge_path = tmp_path / "v.txt", tmp_path / "e.txt"
        vertex_path.write_text("vertex y lam_l2 lam_l1\n0 0.0 1.0 0.0\n1 0.0 0.0 1.0\n")
        edge_path.write_text("u v lam_d1\n0 1 1.0\n")
        code = main(["solve", "--vertices", str(vertex_path), "--edges", str(edge_path),
                     "--gamma-mode", "smooth-only"])
        assert code == EXIT_USAGE

    def test_numerical_failure(self, two_vertex_files, monkeypatch):
        """Test that a non-finite iterate exits with the numerical failure code."""
        def broken(x1, x2, *args):
            return np.full_like(x1, np.nan), np.full_like(x2, np.nan)

        monkeypatch.setattr("app.core.pgfb_solver._pair_diff", broken)
        assert main(["solve", *two_vertex_files]) == EXIT_NUMERICAL


@pytest.mark.integration
@pytest.mark.cli
class TestSynthCommand:
    """Test suite for the synth command."""

    def test_grid_files(self, tmp_path, capsys):
        """Test line counts of a 32x32 instance."""
        vertex_path, edge_path = tmp_path / "v.txt", tmp_path / "e.txt"
        code = main(["synth", "--grid", "32x32", "--seed", "0",
                     "--vertices", str(vertex_path), "--edges", str(edge_path)])
        assert code == EXIT_OK
        assert len(vertex_path.read_text().splitlines()) == 1025
        assert len(edge_path.read_text().splitlines()) == 1985
        assert _parse_output(capsys.readouterr().out) == {"vertices": "1024", "edges": "1984"}

    def test_same_seed_same_bytes(self, tmp_path):
        """Test byte-identical files for a fixed seed."""
        outputs = []
        for run in ("a", "b"):
            vertex_path, edge_path = tmp_path / f"{run}_v.txt", tmp_path / f"{run}_e.txt"
            assert main(["synth", "--grid", "16x16", "--seed", "7", "--zero-frac", "0.1",
                         "--vertices", str(vertex_path), "--edges", str(edge_path)]) == EXIT_OK
            outputs.append((vertex_path.read_bytes(), edge_path.read_bytes()))
        assert outputs[0] == outputs[1]

    def test_bad_grid(self, tmp_path):
        """Test rejection of a malformed grid size."""
        assert main(["synth", "--grid", "32by32", "--vertices", str(tmp_path / "v"),
                     "--edges", str(tmp_path / "e")]) == EXIT_USAGE


@pytest.mark.integration
@pytest.mark.cli
class TestCompareAndEvaluate:
    """Test suite for the compare and evaluate commands."""

    def test_compare_writes_gap_csv(self, grid_files, tmp_path, capsys):
        """Test the combined gap file and the summary."""
        out = tmp_path / "gaps.csv"
        code = main(["compare", *grid_files, "--max-iter", "40", "--reference-iter", "200",
                     "--algos", "pgfb-theta", "pgfb-0", "ppd", "gfb-scalar", "--out", str(out)])
        assert code == EXIT_OK

        with open(out, newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert list(rows[0]) == ["algo", "iter", "seconds", "objective_gap"]
        assert {row["algo"] for row in rows} == {"pgfb-theta", "pgfb-0", "ppd", "gfb-scalar"}
        assert all(float(row["objective_gap"]) >= 0.0 for row in rows)
        assert sum(1 for row in rows if row["algo"] == "ppd") == 40

        values = _parse_output(capsys.readouterr().out)
        assert "reference" in values
        assert "pgfb-theta.iterations_to_gap" in values

    def test_evaluate(self, two_vertex_files, tmp_path, capsys):
        """Test objective evaluation of a solution file."""
        solution = tmp_path / "x.txt"
        solution.write_text("1.0\n3.0\n")
        assert main(["evaluate", *two_vertex_files, "--solution", str(solution)]) == EXIT_OK
        assert float(_parse_output(capsys.readouterr().out)["objective"]) == 3.0

    def test_evaluate_wrong_length(self, two_vertex_files, tmp_path):
        """Test that a short solution file is a data error."""
        solution = tmp_path / "x.txt"
        solution.write_text("1.0\n")
        assert main(["evaluate", *two_vertex_files, "--solution", str(solution)]) == EXIT_DATA
