"""resonlab: complex-scaling resonance laboratory for finite-level
particle-boson models on truncated Fock spaces."""

__version__ = "0.1.0"

from .errors import (BranchLossError, CapacityError, NumericalError,
                     ResonlabError, SingularBlockError, ValidationError)

__all__ = [
    "__version__",
    "ResonlabError", "ValidationError", "CapacityError",
    "NumericalError", "BranchLossError", "SingularBlockError",
]
