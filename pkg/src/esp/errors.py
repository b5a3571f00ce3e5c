"""Exception types raised across the library."""


class EspError(Exception):
    """Base class for library errors."""


class SingularityError(EspError, ValueError):
    """A field or kernel was requested at a source point."""


class ParameterError(EspError, ValueError):
    """Invalid numeric parameter or dimension mismatch."""


class NearResonanceError(EspError, ArithmeticError):
    """The loaded impedance system is (numerically) singular."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class PassivityError(EspError, ValueError):
    """A quadratic power form came out significantly negative."""


class DivergenceError(EspError, RuntimeError):
    """An iterative optimizer blew up."""
