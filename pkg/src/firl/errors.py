"""Exception types shared across the package."""


class FirlError(Exception):
    """Base class for all package errors."""


class ConfigError(FirlError):
    """Invalid task, training or pool configuration."""


class InvalidActionError(FirlError):
    """Action code outside the action space, or step on a finished episode."""


class DemoError(FirlError):
    """Demonstration file rejected at ingestion (format, rewards, replay)."""


class CheckpointError(FirlError):
    """Checkpoint file unreadable, corrupt, or shape-inconsistent."""


class TrainingError(FirlError):
    """Training diverged or failed to reach its required threshold."""
