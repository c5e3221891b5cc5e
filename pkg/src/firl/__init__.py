"""FIRL: few-shot imitation over a frozen pool of pre-trained sub-skills."""

from .errors import (CheckpointError, ConfigError, DemoError, FirlError,
                     InvalidActionError, TrainingError)
from .gridworld import Action, GridState, GridWorld, StepResult, TaskConfig

__version__ = "0.1.0"

__all__ = [
    "Action", "GridState", "GridWorld", "StepResult", "TaskConfig",
    "FirlError", "ConfigError", "InvalidActionError", "DemoError",
    "CheckpointError", "TrainingError",
    "__version__",
]
