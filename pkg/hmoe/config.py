"""Runtime configuration loaded from the environment."""

import logging
import os

from dotenv import load_dotenv

from .errors import ConfigurationError

# Load .env file if it exists
load_dotenv()

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Config:
    """Process-wide hmoe settings read from ``HMOE_*`` environment variables."""

    def __init__(self):
        self.log_level: str = os.getenv("HMOE_LOG_LEVEL", "INFO").upper()
        self.output_dir: str = os.getenv("HMOE_OUTPUT_DIR", "runs/latest")

        # Tracing
        self.tracing_enabled: bool = os.getenv("HMOE_TRACING_ENABLED", "true").lower() == "true"
        self.service_name: str = os.getenv("HMOE_SERVICE_NAME", "hmoe")

        # Artifacts; %.17g round-trips every float64
        self.csv_float_format: str = os.getenv("HMOE_CSV_FLOAT_FORMAT", "%.17g")

    @property
    def numeric_log_level(self) -> int:
        return getattr(logging, self.log_level, logging.INFO)

    def validate(self) -> None:
        """Validate configuration."""
        if self.log_level not in LOG_LEVELS:
            raise ConfigurationError(
                f"must be one of {', '.join(LOG_LEVELS)}, got '{self.log_level}'",
                key="HMOE_LOG_LEVEL",
            )

        if not self.output_dir:
            raise ConfigurationError("must not be empty", key="HMOE_OUTPUT_DIR")

        if not self.service_name:
            raise ConfigurationError("must not be empty", key="HMOE_SERVICE_NAME")

        try:
            self.csv_float_format % 1.5
        except (TypeError, ValueError) as e:
            raise ConfigurationError(
                f"'{self.csv_float_format}' is not a float format", key="HMOE_CSV_FLOAT_FORMAT"
            ) from e

    def __repr__(self) -> str:
        return (
            f"Config(log_level={self.log_level}, output_dir={self.output_dir}, "
            f"tracing_enabled={self.tracing_enabled}, service_name={self.service_name})"
        )


# Global config instance
_config: Config | None = None


def get_config() -> Config:
    """Get or create the global config instance."""
    global _config
    if _config is None:
        _config = Config()
    return _config


def reset_config() -> None:
    """Reset config (useful for testing)."""
    global _config
    _config = None
