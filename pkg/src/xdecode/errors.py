"""Exception hierarchy shared by every xdecode module."""


class XDecodeError(Exception):
    """Base class for all errors raised by xdecode."""


class InvalidArgumentError(XDecodeError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateDataError(XDecodeError, ValueError):
    """Data cannot support the requested fit (e.g. a single effective class)."""


class UndefinedMetricError(XDecodeError, ValueError):
    """A metric is undefined for the given inputs."""


class SingularSystemError(XDecodeError, ArithmeticError):
    """A linear system that must be solved is singular."""


class ConvergenceError(XDecodeError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    grad_norm : float, optional
        Final gradient (or residual) norm reached by the solver.
    """

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class DivergenceError(XDecodeError, RuntimeError):
    """Training produced a non-finite loss."""


class BundleError(XDecodeError, ValueError):
    """A dataset or volume bundle on disk is malformed.

    ``field`` names the manifest entry or file that failed validation.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
