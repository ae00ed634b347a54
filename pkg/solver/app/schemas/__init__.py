from .solver import Algorithm, GammaMode, SolverConfig, WeightMode
from .synth import SynthConfig

__all__ = ["Algorithm", "GammaMode", "SolverConfig", "SynthConfig", "WeightMode"]
