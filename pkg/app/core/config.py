from pydantic_settings import BaseSettings
from typing import List, Optional
import os


def _default_threads() -> int:
    return max(1, min(4, os.cpu_count() or 1))


class Settings(BaseSettings):
    """Application settings and configuration"""

    # Server configuration
    HOST: str = "0.0.0.0"
    PORT: int = int(os.getenv("PORT", 8000))
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"
    LOG_LEVEL: str = "INFO"

    # Worker parallelism cap (batch prefetch, evaluation)
    MDCN_THREADS: int = _default_threads()

    # Checkpoint served by the HTTP API; None means "not configured"
    MDCN_CHECKPOINT: Optional[str] = None
    MDCN_DEFAULT_FACTOR: int = 2

    # Where the CLI writes checkpoints, logs and reports unless told otherwise
    OUTPUT_DIR: str = "runs"

    # Image processing
    MAX_IMAGE_SIZE: int = 10 * 1024 * 1024  # 10MB
    MAX_IMAGE_DIMENSION: int = 1024  # LR inputs larger than this are rejected
    SUPPORTED_FORMATS: List[str] = ["image/png", "image/jpeg", "image/jpg"]

    # CORS configuration
    ALLOWED_ORIGINS: List[str] = [
        "http://localhost:3000",
        "http://localhost:3001",
        "*"  # Allow all for development (restrict in production)
    ]

    class Config:
        env_file = ".env"
        case_sensitive = True


settings = Settings()
