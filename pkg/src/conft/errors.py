"""Exception hierarchy shared by every module."""


class ConftError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ConftError, ValueError):
    pass


class InputShapeError(ConftError, ValueError):
    pass


class DegenerateRepresentationError(ConftError, ArithmeticError):
    """A representation with (near) zero norm cannot be normalized."""


class StaleCacheError(ConftError, RuntimeError):
    """A forward cache was used after the model parameters changed."""


class OptimizerAbort(ConftError, FloatingPointError):
    def __init__(self, block, message=None):
        self.block = block
        super().__init__(message or f"non-finite gradient in parameter block {block!r}")


class MalformedTaskError(ConftError, ValueError):
    pass


class MalformedPlanError(ConftError, ValueError):
    pass


class UndefinedWeightingError(ConftError, ZeroDivisionError):
    pass


class LabelDomainError(ConftError, ValueError):
    pass


class FinetuneDiverged(ConftError, FloatingPointError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"finetuning diverged at epoch {epoch}")


class EvaluationError(ConftError, ValueError):
    pass


class InsufficientSamplesError(ConftError, ValueError):
    pass


class EpisodeError(ConftError, ValueError):
    pass


class DomainFormatError(ConftError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDomainError(ConftError, ValueError):
    pass


class DegeneratePriorError(ConftError, ArithmeticError):
    pass
