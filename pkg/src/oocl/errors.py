"""Exception hierarchy shared by every module."""


class OoclError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(OoclError):
    """Malformed input file: empty, ragged rows, corrupt descriptor."""


class ParseError(FormatError):
    """A cell in a delimited text file could not be read as a finite number."""

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class SizeMismatchError(OoclError):
    """Descriptor dimensions disagree with the size of the data file."""


class DegenerateInputError(OoclError):
    """Inputs for which the path is undefined (constant response, lambda_max = 0)."""


class PolicyError(OoclError):
    """A screening rule was asked to run outside the models it is valid for."""


class ConvergenceError(OoclError):
    """Coordinate descent or the KKT re-solve loop did not converge."""

    def __init__(self, message, lam=None, fold=None):
        super().__init__(message)
        self.lam = lam
        self.fold = fold
