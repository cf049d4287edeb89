"""Exception types shared across the package."""


class GatedRNNError(Exception):
    """Base class for all package errors."""


class ShapeError(GatedRNNError, ValueError):
    """Operand dimensions do not agree."""


class ParameterError(GatedRNNError, ValueError):
    """A size, scale or hyperparameter is outside its valid range."""


class DataError(GatedRNNError, ValueError):
    """Input data violates a dataset invariant."""


class ParseError(DataError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ContractError(GatedRNNError, ValueError):
    """Arguments that should come from matching calls do not match."""


class OracleError(GatedRNNError, ArithmeticError):
    """The finite-difference oracle saw a non-finite loss."""


class DivergenceError(GatedRNNError, ArithmeticError):
    """Training produced a non-finite loss.

    ``result`` carries the partial training result (best checkpoint so far).
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SearchError(DivergenceError):
    """Every learning-rate candidate diverged."""
