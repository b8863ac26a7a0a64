"""Weight friction: magnitude-dependent gradient damping for continual learning."""

from .core import PRNG_ALGORITHM, Prng
from .optim import FrictionFunction, OptimizerConfig, friction_factor

__all__ = ["PRNG_ALGORITHM", "Prng", "FrictionFunction", "OptimizerConfig", "friction_factor"]
__version__ = "0.1.0"
