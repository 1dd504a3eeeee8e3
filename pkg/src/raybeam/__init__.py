"""Ray flows, weighted ray transforms, and Gaussian beams on conformal media."""

__version__ = "0.1.0"

from .fields import (
    AdmissibilityReport,
    BumpPotential,
    ConstantField,
    Domain,
    ExpPotentialField,
    GaussianLensField,
    RadialPolynomialField,
    check_admissibility,
    make_field,
    unit_ball,
)
from .flow import PhasePoint, ScatteringRecord, Trajectory, backtrace, integrate, scattering_relation

__all__ = [
    "AdmissibilityReport",
    "BumpPotential",
    "ConstantField",
    "Domain",
    "ExpPotentialField",
    "GaussianLensField",
    "PhasePoint",
    "RadialPolynomialField",
    "ScatteringRecord",
    "Trajectory",
    "backtrace",
    "check_admissibility",
    "integrate",
    "make_field",
    "scattering_relation",
    "unit_ball",
    "__version__",
]
