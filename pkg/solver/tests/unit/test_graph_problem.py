"""
Unit tests for the graph problem model, file format and metrics.
"""
import math

import numpy as np
import pytest

from app.core.graph_problem import (
    DiagonalMetric,
    active_sets,
    compression_ratio,
    grad_f,
    lipschitz_metric,
    load_problem,
    objective_value,
    relative_error,
    save_problem,
    validate_problem,
)
from app.core.problem_validator import (
    ProblemParseError,
    ProblemValidationError,
    ValidationSeverity,
)
from tests.factories import make_problem, random_graph


@pytest.mark.unit
class TestGraphProblem:
    """Test suite for problem construction and validation."""

    def test_edges_stored_with_smaller_endpoint_first(self):
        """Test that edges are normalized to u < v."""
        p = make_problem(y=[0.0, 1.0, 2.0], lam_l2=[1.0, 1.0, 1.0], edges=[(1, 0), (2, 1)], lam_d1=[1.0, 1.0])
        assert p.edges.tolist() == [[0, 1], [1, 2]]
        assert p.num_edges == 2

    def test_arrays_are_read_only(self, two_vertex_problem):
        """Test that a constructed problem cannot be mutated."""
        with pytest.raises(ValueError):
            two_vertex_problem.y[0] = 5.0

    def test_self_loop_rejected(self):
        """Test rejection of self-loops."""
        with pytest.raises(ProblemValidationError, match="Self-loop"):
            make_problem(y=[0.0, 1.0], lam_l2=[1.0, 1.0], edges=[(1, 1)], lam_d1=[1.0])

    def test_duplicate_undirected_edge_rejected(self):
        """Test that (0, 1) and (1, 0) count as the same edge."""
        with pytest.raises(ProblemValidationError, match="Duplicate"):
            make_problem(y=[0.0, 1.0], lam_l2=[1.0, 1.0], edges=[(0, 1), (1, 0)], lam_d1=[1.0, 2.0])

    def test_endpoint_out_of_range_rejected(self):
        """Test rejection of endpoints outside the vertex range."""
        with pytest.raises(ProblemValidationError, match="outside"):
            make_problem(y=[0.0, 1.0], lam_l2=[1.0, 1.0], edges=[(0, 2)], lam_d1=[1.0])

    def test_uncovered_vertex_rejected(self):
        """Test rejection of a vertex without fidelity, l1 weight or active edge."""
        with pytest.raises(ProblemValidationError, match="Uncovered"):
            make_problem(y=[0.0, 1.0, 2.0], lam_l2=[1.0, 1.0, 0.0], edges=[(0, 1), (1, 2)], lam_d1=[1.0, 0.0])

    def test_non_finite_observation_rejected(self):
        """Test rejection of NaN observations."""
        with pytest.raises(ProblemValidationError, match="finite"):
            make_problem(y=[0.0, float("nan")], lam_l2=[1.0, 1.0], edges=[(0, 1)], lam_d1=[1.0])

    def test_negative_coefficient_rejected(self):
        """Test rejection of negative weights."""
        with pytest.raises(ProblemValidationError, match="nonnegative"):
            make_problem(y=[0.0, 1.0], lam_l2=[1.0, -1.0], edges=[(0, 1)], lam_d1=[1.0])

    def test_nonpositive_border_length_rejected(self):
        """Test rejection of mu <= 0."""
        with pytest.raises(ProblemValidationError, match="Border length"):
            make_problem(y=[0.0, 1.0], lam_l2=[1.0, 1.0], edges=[(0, 1)], lam_d1=[1.0], mu=[0.0])

    def test_shape_mismatch_rejected(self):
        """Test rejection of per-edge arrays of the wrong length."""
        with pytest.raises(ProblemValidationError, match="Expected 1 values"):
            make_problem(y=[0.0, 1.0], lam_l2=[1.0, 1.0], edges=[(0, 1)], lam_d1=[1.0, 2.0])

    def test_zero_edge_weight_is_a_warning(self):
        """Test that an inactive edge is accepted with a warning."""
        p = make_problem(y=[0.0, 1.0], lam_l2=[1.0, 1.0], edges=[(0, 1)], lam_d1=[0.0])
        result = validate_problem(p)
        assert result.is_valid
        assert [w.field for w in result.warnings] == ["lam_d1[0]", "vertices"]
        assert all(w.severity == ValidationSeverity.WARNING for w in result.warnings)

    def test_isolated_vertices_are_a_warning(self):
        """Test that fidelity-only vertices are reported as a warning."""
        p = make_problem(y=[0.0, 1.0, 5.0], lam_l2=[1.0, 1.0, 1.0], edges=[(0, 1)], lam_d1=[1.0])
        result = validate_problem(p)
        assert result.is_valid
        [warning] = result.warnings
        assert warning.field == "vertices"
        assert warning.value == 1
        assert "only constrained by fidelity" in warning.message

    def test_check_vector(self, two_vertex_problem):
        """Test vector size and finiteness checks."""
        with pytest.raises(ValueError, match="dimension mismatch"):
            two_vertex_problem.check_vector(np.zeros(3))
        with pytest.raises(ValueError, match="non-finite"):
            two_vertex_problem.check_vector(np.array([0.0, np.inf]))


@pytest.mark.unit
class TestActiveSets:
    """Test suite for active set computation."""

    def test_active_sets(self):
        """Test E+, V+ and the isolated vertices."""
        p = make_problem(
            y=[0.0, 1.0, 2.0, 3.0],
            lam_l2=[1.0, 1.0, 1.0, 1.0],
            edges=[(0, 1), (1, 2), (2, 3)],
            lam_d1=[1.0, 0.0, 0.0],
            lam_l1=[0.0, 0.0, 0.5, 0.0],
        )
        active = active_sets(p)
        assert active.e_plus.tolist() == [0]
        assert active.v_plus.tolist() == [2]
        assert active.isolated.tolist() == [3]
        assert active.num_functionals == 2

    def test_cached_on_problem(self, two_vertex_problem):
        """Test that the problem exposes its active sets."""
        assert two_vertex_problem.active is two_vertex_problem.active
        assert two_vertex_problem.active.e_plus.tolist() == [0]


@pytest.mark.unit
class TestObjective:
    """Test suite for the objective, gradient and cocoercivity metric."""

    def test_objective_two_vertex(self, two_vertex_problem):
        """Test F at the observation and at the minimizer."""
        assert objective_value(two_vertex_problem, [0.0, 4.0]) == pytest.approx(4.0)
        assert objective_value(two_vertex_problem, [1.0, 3.0]) == pytest.approx(3.0)

    def test_objective_with_l1(self):
        """Test the l1 term contribution."""
        p = make_problem(y=[1.0, -2.0], lam_l2=[2.0, 1.0], edges=[(0, 1)], lam_d1=[0.5], lam_l1=[0.25, 1.0])
        # 0.5 * (2 * 1 + 1 * 1) + 0.5 * 2 + (0.25 * 0 + 1 * 1)
        assert objective_value(p, [0.0, -1.0]) == pytest.approx(1.5 + 0.5 + 1.0)

    def test_matches_naive_sum(self, rng):
        """Test the vectorized objective against a term-by-term loop."""
        for _ in range(20):
            p = random_graph(rng)
            x = rng.normal(0.0, 3.0, size=p.num_vertices)
            naive = 0.0
            for v in range(p.num_vertices):
                naive += 0.5 * p.lam_l2[v] * (x[v] - p.y[v]) ** 2 + p.lam_l1[v] * abs(x[v])
            for (u, v), lam in zip(p.edges, p.lam_d1):
                naive += lam * abs(x[u] - x[v])
            assert objective_value(p, x) == pytest.approx(naive, rel=1e-12, abs=1e-12)

    def test_objective_two_vertex_hand_value(self):
        """Test F = 1 + 2 at x = (1, -1) for y = 0."""
        p = make_problem(y=[0.0, 0.0], lam_l2=[1.0, 1.0], edges=[(0, 1)], lam_d1=[1.0])
        assert objective_value(p, [1.0, -1.0]) == 3.0

    def test_rejects_nan(self, two_vertex_problem):
        """Test that a NaN coordinate is refused."""
        with pytest.raises(ValueError, match="non-finite"):
            objective_value(two_vertex_problem, [np.nan, 0.0])
        with pytest.raises(ValueError, match="dimension mismatch"):
            objective_value(two_vertex_problem, [0.0])

    def test_convex_along_segments(self, rng):
        """Test the convexity inequality on random segments."""
        for _ in range(50):
            p = random_graph(rng)
            a, b = rng.normal(0.0, 5.0, size=(2, p.num_vertices))
            fa, fb = objective_value(p, a), objective_value(p, b)
            for t in rng.random(10):
                bound = t * fa + (1.0 - t) * fb
                assert objective_value(p, t * a + (1.0 - t) * b) <= bound + 1e-10 * (1.0 + abs(bound))

    def test_grad_f_finite_differences(self, rng):
        """Test the gradient against central differences of the fidelity."""
        h = 1e-6
        for _ in range(20):
            p = random_graph(rng, max_vertices=20)
            x = rng.normal(0.0, 3.0, size=p.num_vertices)

            def f(z):
                return 0.5 * np.sum(p.lam_l2 * (z - p.y) ** 2)

            numeric = np.array([
                (f(x + h * e) - f(x - h * e)) / (2.0 * h) for e in np.eye(p.num_vertices)
            ])
            np.testing.assert_allclose(grad_f(p, x), numeric, rtol=1e-6, atol=1e-5)

    def test_grad_f(self, three_vertex_problem):
        """Test the fidelity gradient."""
        g = grad_f(three_vertex_problem, np.array([1.0, 1.0, 1.0]))
        assert g.tolist() == [1.0, 0.0, -2.0]

    def test_lipschitz_metric_fallback(self):
        """Test the fallback coefficient on vertices without fidelity."""
        p = make_problem(
            y=[0.0, 0.0, 0.0], lam_l2=[1.0, 3.0, 0.0], edges=[(0, 1), (1, 2)], lam_d1=[1.0, 1.0]
        )
        assert lipschitz_metric(p).coeffs.tolist() == [1.0, 3.0, 2.0]
        assert lipschitz_metric(p, fallback=0.5).coeffs.tolist() == [1.0, 3.0, 0.5]
        with pytest.raises(ValueError, match="fallback"):
            lipschitz_metric(p, fallback=0.0)

    def test_lipschitz_metric_dominates_fidelity(self, rng):
        """Test lam_l2 <= l on random instances, with equality where lam_l2 > 0."""
        for _ in range(50):
            p = random_graph(rng)
            coeffs = lipschitz_metric(p).coeffs
            assert np.all(p.lam_l2 <= coeffs)
            positive = p.lam_l2 > 0
            assert np.array_equal(coeffs[positive], p.lam_l2[positive])

    def test_diagonal_metric_rejects_nonpositive(self):
        """Test metric coefficient checks."""
        with pytest.raises(ValueError, match="strictly positive"):
            DiagonalMetric(np.array([1.0, 0.0]))
        metric = DiagonalMetric(np.array([1.0, 4.0]))
        assert metric.norm(np.array([3.0, 2.0])) == pytest.approx(5.0)


@pytest.mark.unit
class TestMetrics:
    """Test suite for compression ratio and relative error."""

    def test_compression_ratio(self, three_vertex_problem):
        """Test the border length ratio of jumps."""
        p = three_vertex_problem
        # y jumps on both edges (2 + 3), x only on the second (3)
        assert compression_ratio(p, np.array([0.0, 0.0, 1.0])) == pytest.approx(5.0 / 3.0)
        assert compression_ratio(p, p.y) == pytest.approx(1.0)

    def test_compression_ratio_of_observation(self, rng):
        """Test ratio 1 at x = y for a tolerance below the smallest jump."""
        for _ in range(20):
            base = random_graph(rng)
            p = make_problem(
                y=base.y, lam_l2=base.lam_l2, edges=base.edges, lam_d1=base.lam_d1,
                lam_l1=base.lam_l1, mu=rng.uniform(0.5, 1.5, size=base.num_edges),
            )
            jumps = np.abs(p.y[p.edges[:, 0]] - p.y[p.edges[:, 1]])
            zero_tol = 0.5 * np.min(jumps[jumps > 0])
            assert compression_ratio(p, p.y, zero_tol) == 1.0

    def test_compression_ratio_without_jumps(self, three_vertex_problem):
        """Test that a constant solution has infinite compression."""
        assert compression_ratio(three_vertex_problem, np.ones(3)) == math.inf

    def test_compression_ratio_needs_mu(self, two_vertex_problem):
        """Test that mu is required."""
        with pytest.raises(ValueError, match="mu"):
            compression_ratio(two_vertex_problem, np.zeros(2))

    def test_relative_error(self, three_vertex_problem):
        """Test the nu-weighted relative error."""
        p = three_vertex_problem
        # y_bar = (0 + 1 + 4) / 4 = 1.25, spread^2 = 1.5625 + 0.0625 + 1.125
        expected = math.sqrt(2.0 / 2.75)
        assert relative_error(p, np.array([0.0, 1.0, 1.0])) == pytest.approx(expected)
        assert relative_error(p, p.y) == 0.0

    def test_relative_error_undefined(self):
        """Test the constant observation case."""
        p = make_problem(y=[2.0, 2.0], lam_l2=[1.0, 1.0], edges=[(0, 1)], lam_d1=[1.0], nu=[1.0, 1.0])
        with pytest.raises(ValueError, match="undefined"):
            relative_error(p, np.zeros(2))


@pytest.mark.unit
class TestProblemFiles:
    """Test suite for loading and saving vertex/edge files."""

    def test_save_and_load(self, three_vertex_problem, problem_files):
        """Test that a saved problem loads back identically."""
        vertex_path, edge_path = problem_files(three_vertex_problem)
        loaded = load_problem(vertex_path, edge_path)
        for name in ("edges", "y", "lam_l2", "lam_d1", "lam_l1", "mu", "nu"):
            assert np.array_equal(getattr(loaded, name), getattr(three_vertex_problem, name)), name

    def test_save_and_load_random_graphs(self, rng, problem_files):
        """Test exact float preservation on random instances."""
        for _ in range(5):
            p = random_graph(rng)
            loaded = load_problem(*problem_files(p))
            assert np.array_equal(loaded.y, p.y)
            assert np.array_equal(loaded.lam_d1, p.lam_d1)
            assert loaded.mu is None and loaded.nu is None

    def test_headers(self, two_vertex_problem, problem_files):
        """Test the file headers without optional columns."""
        vertex_path, edge_path = problem_files(two_vertex_problem)
        assert vertex_path.read_text().splitlines()[0] == "vertex y lam_l2 lam_l1"
        assert edge_path.read_text().splitlines()[0] == "u v lam_d1"

    def test_malformed_number_reports_line(self, tmp_path):
        """Test that a bad value is reported with its line number."""
        vertex_path = tmp_path / "v.txt"
        edge_path = tmp_path / "e.txt"
        vertex_path.write_text("vertex y lam_l2 lam_l1\n0 0.0 1.0 0.0\n1 abc 1.0 0.0\n")
        edge_path.write_text("u v lam_d1\n0 1 1.0\n")
        with pytest.raises(ProblemParseError) as excinfo:
            load_problem(vertex_path, edge_path)
        assert excinfo.value.line == 3

    def test_bad_header(self, tmp_path):
        """Test rejection of an unexpected header."""
        vertex_path = tmp_path / "v.txt"
        edge_path = tmp_path / "e.txt"
        vertex_path.write_text("id y lam_l2 lam_l1\n0 0.0 1.0 0.0\n")
        edge_path.write_text("u v lam_d1\n")
        with pytest.raises(ProblemParseError) as excinfo:
            load_problem(vertex_path, edge_path)
        assert excinfo.value.line == 1

    def test_invalid_content_raises_validation_error(self, tmp_path):
        """Test that parsed but invalid data raises a validation error."""
        vertex_path = tmp_path / "v.txt"
        edge_path = tmp_path / "e.txt"
        vertex_path.write_text("vertex y lam_l2 lam_l1\n0 0.0 1.0 0.0\n1 1.0 1.0 0.0\n")
        edge_path.write_text("u v lam_d1\n0 0 1.0\n")
        with pytest.raises(ProblemValidationError) as excinfo:
            load_problem(vertex_path, edge_path)
        assert excinfo.value.issues[0].line == 2

    def test_save_returns_paths(self, two_vertex_problem, tmp_path):
        """Test the returned paths."""
        paths = save_problem(two_vertex_problem, tmp_path / "a.txt", str(tmp_path / "b.txt"))
        assert [path.name for path in paths] == ["a.txt", "b.txt"]
