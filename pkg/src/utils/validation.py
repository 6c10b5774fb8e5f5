"""
Centralized validation utilities and error types for the lab
Every library error derives from LabError and carries its context as attributes
"""

from typing import Any, Iterable, Optional, Sequence

import numpy as np


class LabError(Exception):
    """Base class for all lab errors"""
    pass


class ValidationError(LabError):
    """Custom exception for precondition failures"""
    pass


class DimensionMismatchError(ValidationError):
    """A vector or matrix has the wrong size"""

    def __init__(self, what: str, expected: Any, actual: Any):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected size {expected}, got {actual}")


class NonFiniteError(ValidationError):
    """NaN or Inf where finite values are required"""

    def __init__(self, what: str, details: Optional[dict] = None):
        self.what = what
        self.details = details or {}
        suffix = ""
        if self.details:
            suffix = " (" + ", ".join(f"{k}={v}" for k, v in self.details.items()) + ")"
        super().__init__(f"non-finite values in {what}{suffix}")


class StaleCacheError(ValidationError):
    """Backward called with a cache that does not belong to the current net state"""
    pass


class TopologyMismatchError(ValidationError):
    """Two networks that must share layer sizes do not"""

    def __init__(self, expected: Sequence[int], actual: Sequence[int]):
        self.expected = list(expected)
        self.actual = list(actual)
        super().__init__(f"topology mismatch: expected {self.expected}, got {self.actual}")


class ScenarioNotFoundError(ValidationError):
    """Unknown scenario id"""

    def __init__(self, scenario_id: str, registered: Iterable[str]):
        self.scenario_id = scenario_id
        self.registered = sorted(registered)
        super().__init__(f"unknown scenario '{scenario_id}'; registered scenarios: {self.registered}")


class ScenarioNotImplementedError(LabError):
    """Registered plug-in slot without an implementation"""
    pass


class EpisodeDoneError(ValidationError):
    """Stepping a world that already reached its horizon"""
    pass


class VariantMismatchError(ValidationError):
    """Operation requested on a bundle of the wrong algorithm variant"""
    pass


class ClockViolationError(ValidationError):
    """Policy update requested outside the delayed-update cadence"""
    pass


class EmptyProbeWindowError(ValidationError):
    """No transitions written since the last evaluation marker"""
    pass


class SnapshotRestoreError(LabError):
    """A probe snapshot could not be restored"""
    pass


class CheckpointFormatError(LabError):
    """Checkpoint bytes do not follow the MTD3 format"""
    pass


class ConfigError(LabError):
    """Configuration could not be parsed or validated"""
    pass


class MissingSeedError(LabError):
    """Aggregation could not find the output of a listed seed"""
    pass


class TrainingError(LabError):
    """Component failure with training-loop context attached"""

    def __init__(self, message: str, episode: int, step: int, agent: Optional[int] = None):
        self.episode = episode
        self.step = step
        self.agent = agent
        where = f"episode={episode}, step={step}"
        if agent is not None:
            where += f", agent={agent}"
        super().__init__(f"{message} ({where})")


class ValidationUtils:
    """Centralized validation checks"""

    @staticmethod
    def check_length(vector: np.ndarray, expected: int, what: str = "vector"):
        """Last axis of vector must have the expected length"""
        actual = vector.shape[-1] if vector.ndim > 0 else 0
        if actual != expected:
            raise DimensionMismatchError(what, expected, actual)

    @staticmethod
    def check_finite(values: np.ndarray, what: str, **details):
        """All entries finite"""
        if not np.all(np.isfinite(values)):
            bad = np.flatnonzero(~np.isfinite(np.asarray(values)))
            details.setdefault("first_bad_index", int(bad[0]))
            raise NonFiniteError(what, details)

    @staticmethod
    def check_positive(value: float, what: str):
        if not value > 0:
            raise ValidationError(f"{what} must be positive, got {value}")

    @staticmethod
    def check_index(index: int, size: int, what: str = "index"):
        if not isinstance(index, (int, np.integer)) or not 0 <= index < size:
            raise ValidationError(f"{what} {index} out of range [0, {size})")

    @staticmethod
    def on_simplex(vector: np.ndarray, tol: float = 1e-9) -> bool:
        """Non-negative entries summing to one"""
        return bool(np.all(vector >= -tol) and abs(float(np.sum(vector)) - 1.0) <= tol)
