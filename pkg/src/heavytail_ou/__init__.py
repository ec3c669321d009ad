"""Large deviations of heavy-tailed time averages of an Ornstein-Uhlenbeck process."""
from .errors import (ConfigError, EmptyDataError, ExtrapolationError, InvalidInputError,
                     OutOfRegimeError)
from .ou import ModelParams, PathSample, TimeGrid, sample_path, time_average

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "EmptyDataError", "ExtrapolationError", "InvalidInputError",
    "OutOfRegimeError", "ModelParams", "PathSample", "TimeGrid", "sample_path", "time_average",
]
