"""Asymptotic far fields of thin tubular scatterers and center-curve reconstruction."""

from .errors import (FormatError, GeometryError, IrregularCurveError,
                     NumericalError, ThinTubeError)
from .geometry import (CurveSpline, FrameField, Partition, TubeCoordinates,
                       frame_field, named_spline, spline_basis_matrix,
                       spline_eval, spline_fit, tube_jacobian, tube_point)

__version__ = "0.1.0"
