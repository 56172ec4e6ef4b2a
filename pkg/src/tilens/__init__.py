"""Travel-time tomography toolkit for transversely isotropic media."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvexityError, IntegrationError, ModelInvalidError,  # noqa: E402
                     NotParabolicError, NumericalError, ProbeInvalidError, TilensError, TrappedRayError,
                     ValidationError)
from .material_model import MaterialModel, Mode  # noqa: E402

__all__ = ["__version__", "MaterialModel", "Mode", "TilensError", "ValidationError", "ConfigError",
           "ModelInvalidError", "ProbeInvalidError", "NumericalError", "ConvexityError", "TrappedRayError",
           "IntegrationError", "NotParabolicError"]
