"""Bistatic Doppler estimation with asynchronous, moving transceivers."""

from .errors import BiDopplerError
from .estimator import EstimatorConfig, ParamVector
from .geometry import SceneSnapshot

__all__ = ["BiDopplerError", "EstimatorConfig", "ParamVector", "SceneSnapshot"]
__version__ = "0.1.0"
