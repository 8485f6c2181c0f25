"""Exception types shared across the package."""


class QDCascadeError(Exception):
    """Base class for all package errors."""


class ParameterError(QDCascadeError, ValueError):
    """A physical or numerical parameter is outside its allowed range."""


class InvalidStateError(QDCascadeError, ValueError):
    """A matrix does not describe a valid two-qubit density matrix."""


class ValidationError(QDCascadeError, ValueError):
    """Input data (histograms, configs) failed structural validation."""


class FitError(QDCascadeError, RuntimeError):
    """A curve fit could not produce a meaningful estimate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(QDCascadeError, RuntimeError):
    """The maximum-likelihood optimizer stopped without converging.

    Carries the best state found so far so callers can still inspect it.
    """

    def __init__(self, message, best_rho=None, grad_norm=float("nan"), n_iter=0):
        super().__init__(message)
        self.best_rho = best_rho
        self.grad_norm = grad_norm
        self.n_iter = n_iter
