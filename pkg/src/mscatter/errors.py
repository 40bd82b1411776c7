"""Exception hierarchy.

Input problems (bad files, invalid geometry) derive from :class:`InputError`;
failures of the numerics derive from :class:`NumericalError`.  The CLI maps
these to exit codes 1 and 2.
"""


class MScatterError(Exception):
    pass


class InputError(MScatterError):
    pass


class NumericalError(MScatterError):
    pass


class DomainError(InputError, ValueError):
    """Argument outside the domain of a function or a tabulated grid."""


class MoleculeSyntaxError(InputError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class UnknownSpeciesError(InputError):
    pass


class OverlapError(InputError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"atomic spheres overlap: {lines}")


class IntegrationError(NumericalError):
    pass


class SingularOverlapError(NumericalError):
    """Cholesky factorization of S hit a non-positive pivot."""

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"S is not positive definite (pivot {pivot})")


class UnboundedDiagonalError(NumericalError):
    def __init__(self, message):
        super().__init__(message + "; shift the energy grid slightly")
