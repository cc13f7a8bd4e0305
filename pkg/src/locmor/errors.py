"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class QueryError(ValueError):
    pass


class NumericalError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ResourceError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


class DomainError(ValueError):
    """Argument outside the domain of a mathematical function."""
