"""Exception hierarchy shared by all modules."""


class MoePlanError(Exception):
    """Base class for every error raised by this package."""


class InvalidScene(MoePlanError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(MoePlanError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GeometryError(MoePlanError):
    pass


class KinematicsError(MoePlanError):
    pass


class ShapeError(MoePlanError):
    pass


class MaskError(MoePlanError):
    pass


class NumericsError(MoePlanError):
    pass


class OptimizerError(MoePlanError):
    pass


class MatchError(MoePlanError):
    pass


class TrainingError(MoePlanError):
    pass


class PolicyError(MoePlanError):
    pass


class NumericsWarning(RuntimeWarning):
    """Emitted when a probability is clamped inside a log."""
