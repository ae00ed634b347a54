"""
Solver configuration schemas.
"""
from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..config import settings


class Algorithm(str, Enum):
    """Available minimization algorithms."""
    PGFB = "pgfb"
    GFB_SCALAR = "gfb-scalar"
    PPD = "ppd"


class GammaMode(str, Enum):
    """Whether the first step-size estimate counts only the smooth term or all functionals."""
    SMOOTH_ONLY = "smooth-only"
    WHOLE_FUNCTIONAL = "whole-functional"


class WeightMode(str, Enum):
    """How the per-functional weights are normalized per coordinate."""
    COORDINATE_SCALED = "coordinate-scaled"
    SHAPE_PRESERVING = "shape-preserving"


class SolverConfig(BaseModel):
    """Parameters of one solver run."""
    model_config = ConfigDict(frozen=True)

    algo: Algorithm = Algorithm.PGFB
    rho: float = Field(default_factory=lambda: settings.rho, gt=0.0, lt=2.0)
    rho_schedule: Optional[Tuple[float, ...]] = None
    delta: float = Field(default_factory=lambda: settings.delta, gt=0.0, lt=1.0)
    gamma_mode: GammaMode = GammaMode.WHOLE_FUNCTIONAL
    weight_mode: WeightMode = WeightMode.COORDINATE_SCALED
    max_iter: int = Field(1000, ge=0)
    tol: float = Field(1e-8, ge=0.0)
    recond_threshold: float = Field(0.0, ge=0.0)
    recond_divisor: float = Field(default_factory=lambda: settings.recond_divisor, gt=1.0)
    max_reconditionings: int = Field(default_factory=lambda: settings.max_reconditionings, ge=0)
    recond_fractions: Tuple[float, ...] = ()
    lipschitz_fallback: Optional[float] = Field(None, gt=0.0)
    ppd_alpha: float = Field(1.0, ge=0.0, le=2.0)
    threads: int = Field(default_factory=lambda: settings.threads, ge=1)

    @field_validator("rho_schedule")
    @classmethod
    def validate_rho_schedule(cls, v):
        if v is None:
            return v
        if len(v) == 0:
            raise ValueError("rho_schedule must not be empty")
        for r in v:
            if not 0.0 < r < 2.0:
                raise ValueError(f"relaxation {r} outside (0, 2)")
        return tuple(float(r) for r in v)

    @field_validator("recond_fractions")
    @classmethod
    def validate_recond_fractions(cls, v):
        for f in v:
            if not 0.0 < f < 1.0:
                raise ValueError(f"reconditioning fraction {f} outside (0, 1)")
        return tuple(sorted(float(f) for f in v))

    def rho_at(self, k: int) -> float:
        """Relaxation used at iteration k (0-based)."""
        if self.rho_schedule is None:
            return self.rho
        return self.rho_schedule[min(k, len(self.rho_schedule) - 1)]

    @property
    def rho_bar(self) -> float:
        """Supremum of the relaxation sequence, used in the step-size cap."""
        if self.rho_schedule is None:
            return self.rho
        return max(self.rho_schedule)
