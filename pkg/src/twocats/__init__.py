"""2-Cats: neural bivariate copulas with Sobolev training."""

import jax

# Model evaluation, derivative checks and quadrature comparisons all need
# double precision; training may still run in float32 explicitly.
jax.config.update("jax_enable_x64", True)

from .copulas import ReferenceCopula, SyntheticSpec, make_synthetic  # noqa: E402
from .model import MixtureTwoCats, TwoCatsModel  # noqa: E402

__all__ = ["ReferenceCopula", "SyntheticSpec", "make_synthetic", "TwoCatsModel", "MixtureTwoCats"]
__version__ = "0.1.0"
