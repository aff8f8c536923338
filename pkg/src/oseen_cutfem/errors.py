class CutFEMError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(CutFEMError, ValueError):
    pass


class MeshInvalidError(CutFEMError):
    pass


class EvaluationError(CutFEMError):
    """A user supplied closure returned non-finite values."""


class DomainOutsideBackgroundError(CutFEMError):
    pass


class NotCutError(CutFEMError):
    pass


class ConstraintUndefinedError(CutFEMError):
    """The interior mesh is empty, so the pressure mean cannot be fixed."""


class OutOfDomainError(CutFEMError):
    pass


class AssemblyError(CutFEMError):
    pass


class DeltaTooSmallError(CutFEMError):
    """The extension layer does not cover the next discrete domain."""


class SolverError(CutFEMError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


class StepFailure(CutFEMError):
    def __init__(self, message, step=None, report=None):
        super().__init__(message)
        self.step = step
        self.report = report


class ConfigError(CutFEMError):
    def __init__(self, message, path=""):
        super().__init__(message)
        self.path = path
