"""Exception types shared across the package."""


class ThinTubeError(Exception):
    """Base class for all errors raised by thintube."""


class GeometryError(ThinTubeError, ValueError):
    """Invalid curve, partition or tube-coordinate input."""


class IrregularCurveError(GeometryError):
    """The curve speed |p'| vanishes at a node where it is needed."""


class NumericalError(ThinTubeError, ArithmeticError):
    """A numerical procedure failed (singular solve, non-convergence)."""


class FormatError(ThinTubeError, ValueError):
    """A data file is malformed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
        self.reason = message


class DimensionError(FormatError):
    """Record count or shape disagrees with the declared grid or partition."""
