"""Exception hierarchy shared by all sylkit modules."""


class SylkitError(Exception):
    """Base class for every error raised by sylkit."""


class DimensionMismatch(SylkitError, ValueError):
    pass


class NonConvergence(SylkitError, RuntimeError):
    pass


class NotHermitian(SylkitError, ValueError):
    pass


class NotOrthonormal(SylkitError, ValueError):
    pass


class SingularOperator(SylkitError, ArithmeticError):
    """The projected Sylvester operator has (numerically) overlapping spectra.

    ``pair`` holds the offending indices ``(i, j)`` of the triangular
    diagonals and ``value`` the magnitude of ``r_ii + s_jj``.
    """

    def __init__(self, msg, pair=None, value=None):
        super().__init__(msg)
        self.pair = pair
        self.value = value


class SingularTau(SylkitError, ArithmeticError):
    pass


class Breakdown(SylkitError, RuntimeError):
    """A new basis block is numerically dependent on the previous ones."""

    def __init__(self, msg, column=None):
        super().__init__(msg)
        self.column = column


class ReplayMismatch(SylkitError, RuntimeError):
    pass


class MaxIterations(SylkitError, RuntimeError):
    """Iteration cap reached before the stopping test fired.

    The partially converged :class:`~sylkit.krylov.SolveResult` is attached
    as ``result`` so callers can still inspect the history and factors.
    """

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class ParseError(SylkitError, ValueError):
    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


class InvalidField(SylkitError, ValueError):
    pass


class InvalidGeometry(SylkitError, ValueError):
    pass


class UnknownGenerator(SylkitError, ValueError):
    pass
