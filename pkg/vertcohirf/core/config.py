from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="VERTCOHIRF_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Output
    output_dir: str = Field(
        default="./results",
        description="Directory where experiment artifacts are written"
    )

    # Protocol
    default_max_iter: int = Field(
        default=100,
        ge=1,
        description="Iteration cap used when a config does not set max_iter"
    )
    collect_timeout: float = Field(
        default=30.0,
        gt=0,
        description="Seconds a collect waits for missing peers before failing"
    )

    # TCP transport
    tcp_bind_address: Optional[str] = Field(
        default=None,
        description="Host to bind TCP endpoints to, overriding the peer table host"
    )
    tcp_connect_retries: int = Field(
        default=50,
        ge=1,
        description="Connection attempts per peer before giving up"
    )
    tcp_retry_interval: float = Field(
        default=0.1,
        gt=0,
        description="Seconds between connection attempts"
    )

    # Metrics
    silhouette_sample_size: int = Field(
        default=5000,
        ge=3,
        description="Largest sample count silhouette is computed on exactly"
    )

    # Celery
    celery_broker_url: str = Field(
        default="memory://",
        description="Celery broker URL (e.g. redis://localhost:6379/0)"
    )
    celery_result_backend: str = Field(
        default="cache+memory://",
        description="Celery result backend URL"
    )
    celery_task_always_eager: bool = Field(
        default=True,
        description="Run repetitions in-process instead of on a worker"
    )
    max_task_timeout: int = Field(
        default=3600,
        description="Maximum repetition runtime in seconds"
    )

    # Logging
    log_level: str = Field(default="INFO", description="Log level")
    log_format: str = Field(default="json", description="Log format (json or text)")

    @property
    def uses_worker(self) -> bool:
        """Check if repetitions are dispatched to a Celery worker"""
        return not self.celery_task_always_eager


settings = Settings()
