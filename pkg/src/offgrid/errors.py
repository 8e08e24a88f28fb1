"""Exception hierarchy shared by every module."""


class OffgridError(Exception):
    """Base class for all package errors."""


class InvalidInputError(OffgridError, ValueError):
    pass


class NotPSDError(OffgridError, ValueError):
    pass


class NotInvertibleError(OffgridError, ValueError):
    pass


class ConfigurationError(OffgridError, ValueError):
    pass


class IllConditionedError(OffgridError, ValueError):
    pass


class ConvergenceError(OffgridError, RuntimeError):
    """Raised when an iterative estimator runs out of iterations.

    The last iterate is kept on ``last_iterate`` so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class TrainingDivergedError(OffgridError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class InsufficientSamplesError(OffgridError, ValueError):
    pass


class FingerprintMismatchError(OffgridError, ValueError):
    pass


class SchemaError(OffgridError, ValueError):
    pass
