"""
Configuration settings for the graph solver.
"""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Solver defaults with environment variable support (prefix ``PGFB_``)."""

    model_config = SettingsConfigDict(env_prefix="PGFB_", env_file=".env", extra="ignore")

    # Execution
    threads: int = 1
    log_level: str = "INFO"

    # Relaxation and step-size cap
    rho: float = 1.5
    delta: float = 0.99

    # Reconditioning
    recond_divisor: float = 10.0
    max_reconditionings: int = 8

    # Metrics
    zero_tol_factor: float = 1e-9

    # Benchmark harness
    reference_iter: int = 5000
    compare_max_iter: int = 1000


# Global settings instance
settings = Settings()
