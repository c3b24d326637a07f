"""Orthogonal projection onto spline spaces.

Inputs are either spline families (possibly over other knots) or discretized
curves.  Discrete data are read as piecewise constant functions: the value on
``[t[i], t[i+1])`` is the value recorded at ``t[i]``, so the last value of a
curve is never used.  Their inner products with basis members are exact,
computed from the antiderivatives of the members.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy import linalg

from .bases import BasisSet, SingularBasisError, build_basis
from .spline_core import (
    PiecewisePolynomial,
    SplineFamily,
    as_knots,
    gramian,
    integra,
    lincomb,
    refine_family,
    union_knots,
)


@dataclass(frozen=True, eq=False)
class DiscreteCurveSet:
    """Discretized functional data.

    Either a common argument grid ``args`` with ``values`` of shape
    ``(n_curves, len(args))``, or a tuple of per-curve ``(m_i, 2)`` arrays
    holding arguments and values.
    """

    args: np.ndarray | None = None
    values: np.ndarray | None = None
    curves: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        if self.curves is None:
            args = np.asarray(self.args, dtype=float)
            values = np.atleast_2d(np.asarray(self.values, dtype=float))
            if args.ndim != 1 or values.shape[1] != args.size:
                raise ValueError("values must have one column per argument")
            _check_increasing(args)
            object.__setattr__(self, "args", args)
            object.__setattr__(self, "values", values)
        else:
            curves = tuple(np.asarray(c, dtype=float) for c in self.curves)
            for c in curves:
                if c.ndim != 2 or c.shape[1] != 2:
                    raise ValueError("each curve must be an (m, 2) array of arguments and values")
                _check_increasing(c[:, 0])
            object.__setattr__(self, "curves", curves)

    @classmethod
    def common(cls, args, values) -> "DiscreteCurveSet":
        return cls(args=args, values=values)

    @classmethod
    def from_matrix(cls, matrix) -> "DiscreteCurveSet":
        """Value columns followed by the argument column."""
        m = np.asarray(matrix, dtype=float)
        return cls(args=m[:, -1], values=m[:, :-1].T)

    @classmethod
    def from_list(cls, curves: Sequence) -> "DiscreteCurveSet":
        return cls(curves=tuple(curves))

    @property
    def is_common(self) -> bool:
        return self.curves is None

    def __len__(self) -> int:
        return self.values.shape[0] if self.is_common else len(self.curves)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        if self.is_common:
            for row in self.values:
                yield self.args, row
        else:
            for c in self.curves:
                yield c[:, 0], c[:, 1]

    def subset(self, idx) -> "DiscreteCurveSet":
        idx = np.asarray(idx)
        if self.is_common:
            return DiscreteCurveSet(args=self.args, values=self.values[idx])
        return DiscreteCurveSet(curves=tuple(self.curves[i] for i in np.atleast_1d(idx)))

    def to_matrix(self) -> np.ndarray:
        if not self.is_common:
            raise ValueError("only common-grid data has a matrix layout")
        return np.column_stack((self.values.T, self.args))

    def mean_curve(self) -> "DiscreteCurveSet":
        if not self.is_common:
            raise ValueError("the pointwise mean needs a common grid")
        return DiscreteCurveSet(args=self.args, values=self.values.mean(axis=0, keepdims=True))


def _check_increasing(args: np.ndarray) -> None:
    if args.size < 2 or np.any(np.diff(args) <= 0) or not np.all(np.isfinite(args)):
        raise ValueError("arguments must be finite and strictly increasing")


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    """Coefficients (one row per input), the basis, and the projected splines."""

    coeff: np.ndarray
    basis: BasisSet
    projected: SplineFamily


def _as_family(f) -> SplineFamily:
    if isinstance(f, PiecewisePolynomial):
        return SplineFamily([f])
    return f


def _solve_gram(basis: BasisSet, ip: np.ndarray) -> np.ndarray:
    if basis.orthonormal:
        return ip
    G = gramian(basis.family)
    try:
        factor = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularBasisError(
            f"Gramian of the {basis.basis_type} basis over {basis.knots!r} is not positive definite"
        ) from exc
    return linalg.cho_solve(factor, ip.T).T


def _result(basis: BasisSet, ip: np.ndarray) -> ProjectionResult:
    coeff = _solve_gram(basis, ip)
    return ProjectionResult(coeff, basis, lincomb(basis.family, coeff))


def project_splines(f, target_knots=None, basis_type: str = "splinet", k: int | None = None) -> ProjectionResult:
    """Orthogonal projection of splines onto the space over ``target_knots``.

    Input and target space are embedded into the spline space over the union
    of both knot sets, where the inner products are evaluated.
    """
    family = _as_family(f)
    k = family.order if k is None else int(k)
    target = family.knots if target_knots is None else as_knots(target_knots)
    if abs(target.start - family.knots.start) > 1e-12 * (family.knots.end - family.knots.start) or abs(
        target.end - family.knots.end
    ) > 1e-12 * (family.knots.end - family.knots.start):
        raise ValueError("target knots must span the same range as the input")
    basis = build_basis(target, k, basis_type)
    if target == family.knots:
        fu, bu = family, basis.family
    else:
        union = union_knots(family.knots, target)
        fu, bu = refine_family(family, union), refine_family(basis.family, union)
    return _result(basis, gramian(fu, bu))


def decompose(f, basis_type: str = "splinet") -> ProjectionResult:
    """Coefficients of splines in a basis over their own knots."""
    family = _as_family(f)
    return project_splines(family, family.knots, basis_type)


class DataProjector:
    """Exact inner products of piecewise constant data on a fixed grid with a basis.

    Parameters
    ----------
    basis : BasisSet
    args : array_like
        Strictly increasing arguments shared by all curves to be projected.
    """

    def __init__(self, basis: BasisSet, args):
        args = np.asarray(args, dtype=float)
        _check_increasing(args)
        knots = basis.knots
        if args[0] > knots.start:
            raise ValueError("data arguments do not cover the start of the knot range")
        self.basis = basis
        self.args = args
        clipped = np.clip(args, knots.start, knots.end)
        anti = SplineFamily([integra(s) for s in basis.family], knots, basis.order + 1)
        prim = anti.evaluate(clipped)
        self.increments = np.diff(prim, axis=1).T  # (len(args) - 1, members)
        self.widths = np.diff(clipped)
        self._gram_factor = None
        if not basis.orthonormal:
            self._gram_factor = linalg.cho_factor(gramian(basis.family), lower=True)

    def inner_products(self, values) -> np.ndarray:
        v = np.atleast_2d(np.asarray(values, dtype=float))
        return v[:, :-1] @ self.increments

    def coefficients(self, values) -> np.ndarray:
        ip = self.inner_products(values)
        if self._gram_factor is None:
            return ip
        return linalg.cho_solve(self._gram_factor, ip.T).T

    def sq_norms(self, values) -> np.ndarray:
        """Squared L2 norms of the curves restricted to the knot range."""
        v = np.atleast_2d(np.asarray(values, dtype=float))
        return (v[:, :-1] ** 2) @ self.widths

    def project(self, values) -> ProjectionResult:
        coeff = self.coefficients(values)
        return ProjectionResult(coeff, self.basis, lincomb(self.basis.family, coeff))


def data_sq_norms(d: DiscreteCurveSet, start: float, end: float) -> np.ndarray:
    """Squared L2 norms of piecewise constant curves over ``[start, end]``."""
    out = []
    for args, vals in d:
        w = np.diff(np.clip(args, start, end))
        out.append(float(np.dot(vals[:-1] ** 2, w)))
    return np.array(out)


def project_data(d: DiscreteCurveSet, knots, k: int = 3, basis_type: str = "splinet") -> ProjectionResult:
    """Projection of piecewise constant curves onto the spline space over ``knots``."""
    knots = as_knots(knots)
    basis = build_basis(knots, k, basis_type)
    if d.is_common:
        return DataProjector(basis, d.args).project(d.values)
    rows = [DataProjector(basis, args).inner_products(vals)[0] for args, vals in d]
    ip = np.array(rows).reshape(len(d), len(basis))
    return _result(basis, ip)
