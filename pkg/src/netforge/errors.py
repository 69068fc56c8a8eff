class NetforgeError(Exception):
    """Base class for library errors."""


class DataError(NetforgeError, ValueError):
    """Malformed or infeasible input data."""


class NumericalError(NetforgeError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class UniquenessError(NumericalError):
    """Independent solver starts disagreed on a strictly concave problem."""
