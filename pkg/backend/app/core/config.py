from pydantic_settings import BaseSettings
import os

class Settings(BaseSettings):
    # Project
    PROJECT_NAME: str = "PVG4D Distillation Engine"
    VERSION: str = "1.0.0"

    # Output
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "runs")
    CHECKPOINT_VERSION: int = 1

    # Parallelism (caps the rasterizer worker pool)
    PVG4D_THREADS: int = int(os.getenv("PVG4D_THREADS", "1"))
    TILE_ROWS: int = 16

    # Rasterizer constants
    NEAR_PLANE: float = 1e-4
    COVARIANCE_FLOOR: float = 0.3
    ALPHA_MIN: float = 1.0 / 255.0
    ALPHA_MAX: float = 0.999

    # Distillation safety rail on exposed uncertainty values
    BETA_CLAMP: float = 1e3

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Environment
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "development")

    class Config:
        case_sensitive = True
        env_file = ".env"

settings = Settings()
