"""
Synthetic grid instances with a piecewise-constant ground truth.
"""
from typing import Tuple
import logging

import numpy as np

from ..schemas.synth import SynthConfig
from .graph_problem import GraphProblem

logger = logging.getLogger(__name__)

# Piece values are drawn uniformly in [0, PIECE_VALUE_RANGE)
PIECE_VALUE_RANGE = 10.0
BORDER_LENGTH_RANGE = (0.5, 1.5)
LOGNORMAL_SIGMA = 1.0


def grid_edges(width: int, height: int) -> np.ndarray:
    """4-connected grid edges over row-major vertex ids, horizontal then vertical."""
    ids = np.arange(width * height).reshape(height, width)
    horizontal = np.column_stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()])
    vertical = np.column_stack([ids[:-1, :].ravel(), ids[1:, :].ravel()])
    return np.vstack([horizontal, vertical]).astype(np.int64)


def piecewise_constant(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Each vertex takes the value of its nearest seed point (Voronoi cells)."""
    rows, cols = np.divmod(np.arange(cfg.width * cfg.height), cfg.width)
    seeds = rng.uniform((0.0, 0.0), (cfg.height, cfg.width), size=(cfg.pieces, 2))
    values = rng.uniform(0.0, PIECE_VALUE_RANGE, size=cfg.pieces)
    distance = (rows[:, None] - seeds[None, :, 0]) ** 2 + (cols[:, None] - seeds[None, :, 1]) ** 2
    return values[np.argmin(distance, axis=1)]


def generate_grid(cfg: SynthConfig) -> Tuple[GraphProblem, np.ndarray]:
    """
    Build a noisy grid instance.

    Args:
        cfg: Generator parameters; the seed fixes every random draw

    Returns:
        The problem and its noiseless ground truth
    """
    rng = np.random.default_rng(cfg.seed)
    num_vertices = cfg.width * cfg.height
    truth = piecewise_constant(cfg, rng)
    y = truth + rng.normal(0.0, cfg.noise, size=num_vertices) if cfg.noise > 0 else truth.copy()

    if cfg.heterogeneous:
        nu = rng.lognormal(mean=0.0, sigma=LOGNORMAL_SIGMA, size=num_vertices)
    else:
        nu = np.ones(num_vertices)

    lam_l1 = np.zeros(num_vertices)
    missing = rng.choice(num_vertices, size=int(round(cfg.zero_frac * num_vertices)), replace=False)
    nu[missing] = 0.0
    y[missing] = 0.0
    lam_l1[missing] = cfg.l1_weight

    edges = grid_edges(cfg.width, cfg.height)
    mu = rng.uniform(*BORDER_LENGTH_RANGE, size=len(edges))

    problem = GraphProblem(
        num_vertices=num_vertices,
        edges=edges,
        y=y,
        lam_l2=nu.copy(),
        lam_d1=cfg.tv_weight * mu,
        lam_l1=lam_l1,
        mu=mu,
        nu=nu,
    )
    logger.info(
        f"Generated {cfg.width}x{cfg.height} grid: {num_vertices} vertices, {len(edges)} edges, "
        f"{len(missing)} without observation"
    )
    return problem, truth
