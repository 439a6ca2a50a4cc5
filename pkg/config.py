"""Application configuration."""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Library and runner settings from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="BRANCHSTAB_",
        case_sensitive=False,
        extra="ignore"
    )

    # ============================================
    # Runner
    # ============================================
    # Default worker count for replicate generation (overridden by --workers)
    workers: int = 1

    # Replicates per RNG substream; changing it changes every sampled report
    block_size: int = 2048

    alpha_level: float = 0.01
    default_seed: int = 20240607
    out_dir: str = "reports"
    log_level: str = "INFO"

    # ============================================
    # Numerics
    # ============================================
    # Backward equation dF/ds = U(F) for General semigroups
    ode_rtol: float = 1e-10
    ode_atol: float = 1e-13

    # A-function quadrature: absolute target and the error we refuse to exceed
    quad_epsabs: float = 1e-13
    quad_tol: float = 1e-9

    # Empirical Yaglom law (General semigroups)
    yaglom_horizon: float = 12.0
    yaglom_cutoff: int = 200
    yaglom_tv_threshold: float = 0.01
    state_space_factor: int = 4

    # Above this population, General branching switches from Gillespie paths
    # to multinomial draws from the transition pmf
    gillespie_max_population: int = 5000

    # Uniform groups larger than this stay as unplaced blocks; other placements
    # beyond it raise SimulationError
    max_placed_points: int = 1_000_000

    # ============================================
    # Tracing (OpenTelemetry, optional)
    # ============================================
    tracing_enabled: bool = False

    # OTLP gRPC receiver
    tracing_endpoint: str = "http://localhost:4317"
    tracing_service_name: str = "branchstab"


settings = Settings()
