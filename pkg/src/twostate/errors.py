class CompatibilityError(ValueError):
    """Dirichlet data inconsistent with the initial state."""


class SolverError(RuntimeError):
    """A time step could not be carried out."""


class CounterexampleCandidate(RuntimeError):
    """A weighted estimate produced a zero right side with a positive left side."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
