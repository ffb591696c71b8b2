"""Exception hierarchy shared across the package."""


class ErgostabError(Exception):
    """Base class for all package errors."""


class ParameterError(ErgostabError):
    """An argument violates a documented precondition."""


class DivergenceError(ErgostabError):
    """An orbit left the admissible region (non-finite or overlarge weights)."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"orbit diverged at step {step}")


class SingularKernelError(ErgostabError):
    """A kernel matrix is numerically rank-deficient and no ridge was requested."""


class WindowError(ErgostabError):
    """A statistics window is empty or too short for the requested estimate."""


class ConfigError(ErgostabError):
    """Experiment configuration is malformed (unknown key, bad value, bad file)."""
