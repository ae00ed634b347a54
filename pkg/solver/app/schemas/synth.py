"""
Synthetic instance generator schema.
"""
from pydantic import BaseModel, ConfigDict, Field


class SynthConfig(BaseModel):
    """Grid instance with piecewise-constant ground truth."""
    model_config = ConfigDict(frozen=True)

    width: int = Field(32, ge=2)
    height: int = Field(32, ge=2)
    pieces: int = Field(4, ge=1)
    noise: float = Field(0.3, ge=0.0)
    zero_frac: float = Field(0.0, ge=0.0, lt=1.0)
    tv_weight: float = Field(1.0, gt=0.0)
    l1_weight: float = Field(1.0, gt=0.0)
    heterogeneous: bool = False
    seed: int = 0
