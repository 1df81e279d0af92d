"""Exception hierarchy shared across the package.

ValidationError maps to CLI exit code 2, NumericalError to 3.
"""


class ResonlabError(Exception):
    pass


class ValidationError(ResonlabError):
    """Bad configuration, arguments, or violated preconditions."""


class CapacityError(ValidationError):
    """Requested truncation exceeds the configured dimension cap."""


class NumericalError(ResonlabError):
    """Solver failure: non-convergence, singular block, lost branch."""


class BranchLossError(NumericalError):
    """Continuation lost the tracked eigenvalue branch."""


class SingularBlockError(NumericalError):
    """A decimated or shifted block is singular / too ill-conditioned."""
