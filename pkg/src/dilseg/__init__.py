"""Dynamic multi-scale training of dilated networks for dense raster labeling."""

from . import data, engine, gradcheck, infer, metrics, models, scheduler, synth, trainer
from .errors import ConfigError, DataError, DilsegError, NumericError

__version__ = "0.1.0"

__all__ = [
    "data",
    "engine",
    "gradcheck",
    "infer",
    "metrics",
    "models",
    "scheduler",
    "synth",
    "trainer",
    "ConfigError",
    "DataError",
    "DilsegError",
    "NumericError",
    "__version__",
]
