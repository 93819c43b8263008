"""Exception hierarchy."""


class StripWalkError(Exception):
    """Base class for all package errors."""


class ModelError(StripWalkError, ValueError):
    """Invalid environment letter or environment model."""


class EmbeddingError(ModelError):
    """A classical walk cannot be embedded onto the strip."""


class NearSingularError(StripWalkError, ArithmeticError):
    """Resolvent precondition violated."""


class NumericalFailure(StripWalkError, ArithmeticError):
    """An invariant that should hold up to roundoff was violated."""


class DegeneracyError(StripWalkError):
    """Absorbing-chain system is singular or the walk is trapped."""


class TruncationError(StripWalkError):
    """A truncated computation did not stabilise within its cap."""


class InsufficientWindow(StripWalkError):
    """The environment window is too short for the requested computation."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class SeriesDivergence(StripWalkError):
    """A series in the a-matrices failed to decay inside the window."""


class WindowExhausted(StripWalkError):
    """The walker left the realized window."""

    def __init__(self, message, level=None, steps=None):
        super().__init__(message)
        self.level = level
        self.steps = steps


class NotTransient(StripWalkError):
    """An operation that requires transience to the right was given a model
    whose Lyapunov verdict is not ``transient-right``."""


class ConfigError(StripWalkError, ValueError):
    """A scenario configuration is malformed."""


class TaskError(StripWalkError):
    """A scenario task failed; carries the task name and its inputs."""

    def __init__(self, task, inputs, cause):
        super().__init__(f"task {task!r} failed: {type(cause).__name__}: {cause}")
        self.task = task
        self.inputs = inputs
        self.cause = cause
