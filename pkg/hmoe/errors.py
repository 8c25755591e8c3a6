"""Exception hierarchy for hmoe."""

from typing import Any


class HMOEError(Exception):
    """Base class for every error raised by hmoe."""


class DimensionError(HMOEError, ValueError):
    """Tensor extents do not line up for an operation."""


class MathDomainError(HMOEError, ValueError):
    """A value lies outside the domain of a function (e.g. log of a non-positive number)."""


class ContractError(HMOEError, ValueError):
    """A caller broke a precondition of an operation."""


class ConfigurationError(HMOEError, ValueError):
    """Invalid network, experiment or runtime configuration."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        if key is not None and key not in message:
            message = f"{key}: {message}"
        super().__init__(message)


class DataError(HMOEError, ValueError):
    """Dataset contents violate an expectation (bad labels, empty sets, malformed files)."""


class EvaluationError(HMOEError, ValueError):
    """A metric cannot be computed for the given inputs."""


class TrainingAbortedError(HMOEError, RuntimeError):
    """Training stopped because the loss became non-finite."""

    def __init__(self, message: str, snapshot: dict[str, Any] | None = None):
        self.snapshot = snapshot or {}
        super().__init__(message)
