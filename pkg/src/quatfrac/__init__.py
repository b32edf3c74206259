"""Fractional powers of quaternionic vector differential operators on grids."""

from .qalgebra import (CQuaternion, Quaternion, SlicePoint, cqmul, inner,
                       qmul, slice_power)
from .domain import (CoefficientField, DomainSpec, Grid, GridFunction,
                     WeightFunction, build_grid, random_bump_suite,
                     sample_coefficients, weighted_poincare_check)
from .operator import (QOperator, apply, assemble_Qs, assemble_T,
                       identity_operator)

__all__ = [
    "Quaternion", "CQuaternion", "SlicePoint", "qmul", "cqmul", "inner",
    "slice_power", "DomainSpec", "Grid", "GridFunction", "CoefficientField",
    "WeightFunction", "build_grid", "sample_coefficients",
    "weighted_poincare_check", "random_bump_suite", "QOperator", "assemble_T",
    "assemble_Qs", "identity_operator", "apply",
]

__version__ = "0.1.0"
