"""Runtime initialization and shutdown: logging, configuration and tracing."""

import atexit
import logging

from .config import get_config
from .tracing import init_tracing, shutdown_tracing
from .version import __version__

logger = logging.getLogger(__name__)

# Track initialization state
_initialized = False


def init_runtime(
    log_level: str | None = None,
    enable_tracing: bool | None = None,
    service_name: str | None = None,
) -> None:
    """
    Initialize the hmoe runtime.

    This function:
    1. Sets up the ``hmoe`` logger
    2. Loads and validates configuration from environment variables
    3. Initializes OpenTelemetry tracing (optional)
    4. Registers a shutdown handler

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR); overrides HMOE_LOG_LEVEL
        enable_tracing: Overrides HMOE_TRACING_ENABLED
        service_name: Overrides HMOE_SERVICE_NAME

    Environment Variables:
        HMOE_LOG_LEVEL: Logging level (default: INFO)
        HMOE_OUTPUT_DIR: Run directory when none is configured (default: runs/latest)
        HMOE_TRACING_ENABLED: Collect spans into trace_spans.jsonl (default: true)
        HMOE_SERVICE_NAME: Service name on spans (default: hmoe)
        HMOE_CSV_FLOAT_FORMAT: Float format of emitted CSVs (default: %.17g)
    """
    global _initialized

    if _initialized:
        logger.warning("hmoe runtime already initialized, skipping")
        return

    config = get_config()
    if log_level is not None:
        config.log_level = log_level.upper()
    if enable_tracing is not None:
        config.tracing_enabled = enable_tracing
    if service_name is not None:
        config.service_name = service_name

    _setup_logging(config.numeric_log_level)

    try:
        config.validate()
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        raise

    logger.debug(f"🔍 hmoe v{__version__}, {config}")

    if config.tracing_enabled:
        init_tracing(service_name=config.service_name)

    atexit.register(_cleanup_on_exit)
    _initialized = True


def shutdown_runtime() -> None:
    """Shut down tracing. Called automatically on program exit."""
    global _initialized

    if not _initialized:
        return

    try:
        shutdown_tracing()
    except Exception as e:
        logger.error(f"Error during shutdown: {e}", exc_info=True)
    finally:
        _initialized = False


def _cleanup_on_exit() -> None:
    """Cleanup handler called on program exit."""
    if _initialized:
        shutdown_runtime()


def _setup_logging(numeric_level: int) -> None:
    """Setup logging for the hmoe package."""
    hmoe_logger = logging.getLogger("hmoe")
    hmoe_logger.setLevel(numeric_level)

    # Only add handler if none exists
    if not hmoe_logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter(
            "[%(asctime)s] [hmoe] [%(levelname)s] %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
        )
        handler.setFormatter(formatter)
        hmoe_logger.addHandler(handler)

    # Prevent propagation to root logger
    hmoe_logger.propagate = False
