"""Exception hierarchy shared by all modules."""


class LLLVMError(Exception):
    """Base class for every error raised by the package."""


class InvalidParameterError(LLLVMError, ValueError):
    """An argument is outside the domain an operation accepts."""


class NumericalError(LLLVMError, ArithmeticError):
    """A decomposition or solve failed, or a numerical invariant broke."""


class SingularityError(NumericalError):
    """A matrix that must be invertible is singular."""


class ELBODecreaseError(NumericalError):
    """The variational lower bound decreased during EM.

    ``state`` holds the iteration snapshot at the moment of failure.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ParseError(LLLVMError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
