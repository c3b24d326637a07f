"""Splines in derivative-matrix form, orthonormal spline bases and
functional classification of images."""

from .bases import BasisSet, DyadicNet, SingularBasisError, build_basis, build_bsplines, orthonormalize, splinet
from .fda_classify import (
    ClassModel,
    KLModelSpec,
    MetricsReport,
    classify,
    evaluate,
    fit_class,
    project_to_eigenspace,
    sample_kl,
    search_eigen_counts,
)
from .knots_ddk import KnotSelection, ReferenceCurve, add_knot, amse, reference_curve, select_knots
from .projection import DiscreteCurveSet, ProjectionResult, decompose, project_data, project_splines
from .spline_core import KnotVector, PiecewisePolynomial, Spline, SplineFamily, gramian, inner_product, validate_spline

__version__ = "0.1.0"
