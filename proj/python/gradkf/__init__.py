"""Diagonal-covariance Kalman filters tuned online by gradient descent."""

from ._core import *  # noqa: F401,F403
from ._core import ConfigError, Error, NumericalError, __doc__  # noqa: F401

__version__ = "0.1.0"
