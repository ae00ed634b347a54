"""
Pytest configuration and fixtures for the graph solver tests.
"""
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
import pytest

from app.core.graph_problem import GraphProblem, save_problem
from tests.factories import make_problem


@pytest.fixture
def two_vertex_problem() -> GraphProblem:
    """y = (0, 4), unit weights, one edge; the minimizer is (1, 3)."""
    return make_problem(y=[0.0, 4.0], lam_l2=[1.0, 1.0], edges=[(0, 1)], lam_d1=[1.0])


@pytest.fixture
def three_vertex_problem() -> GraphProblem:
    """Path 0-1-2 with border lengths and extensive quantities."""
    return make_problem(
        y=[0.0, 1.0, 2.0],
        lam_l2=[1.0, 1.0, 2.0],
        edges=[(0, 1), (1, 2)],
        lam_d1=[0.5, 0.5],
        mu=[2.0, 3.0],
        nu=[1.0, 1.0, 2.0],
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def problem_files(tmp_path) -> Callable[..., Tuple[Path, Path]]:
    """Write a problem to vertex/edge files under tmp_path."""
    def write(p: GraphProblem, stem: Optional[str] = None) -> Tuple[Path, Path]:
        stem = stem or "problem"
        return save_problem(p, tmp_path / f"{stem}_vertices.txt", tmp_path / f"{stem}_edges.txt")
    return write
