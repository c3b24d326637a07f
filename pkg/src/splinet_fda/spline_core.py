"""Splines stored as derivative values at the knots.

A spline of smoothness order ``k`` over knots ``xi[0] < ... < xi[n+1]`` is kept
as the matrix of its derivatives ``0..k`` at the knots inside its support.
Between two knots the spline is the degree-``k`` Taylor polynomial anchored at
the left knot, so evaluation, integration and inner products all work from the
derivative rows directly.

Conventions
-----------
* Column ``k`` (the piecewise constant top derivative) holds, at knot
  ``xi[i]``, the value on ``[xi[i], xi[i+1])``.  The last knot of every support
  interval holds the left limit instead.
* Internally a *dense* matrix with one row per knot of the whole range is used.
  In that form column ``k`` always holds the right limit, so it is zero at the
  last knot of the range and at every knot where the spline vanishes to the
  right.  All linear operations act on dense matrices.
* A point ``x`` in ``(xi[p], xi[p+1]]`` is evaluated on piece ``p``; the range
  start belongs to piece 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

TOL_SMOOTH = 1e-8
"""Default absolute tolerance for smoothness residuals (columns scaled to order one)."""

PRUNE_TOL = 1e-13
"""Relative size below which a piece of a linear combination is treated as zero."""


class KnotVector:
    """Strictly increasing knots ``xi[0] < ... < xi[n+1]``.

    Parameters
    ----------
    values : array_like
        At least two strictly increasing finite numbers.
    """

    __slots__ = ("values", "equidistant")

    def __init__(self, values, rtol: float = 1e-12):
        v = np.array(values, dtype=float).ravel()
        if v.size < 2:
            raise ValueError("a knot vector needs at least two knots")
        if not np.all(np.isfinite(v)):
            raise ValueError("knots must be finite")
        gaps = np.diff(v)
        if np.any(gaps <= 0):
            raise ValueError("knots must be strictly increasing (duplicated knots are not supported)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        mean_gap = gaps.mean()
        object.__setattr__(
            self, "equidistant", bool(np.all(np.abs(gaps - mean_gap) <= rtol * mean_gap))
        )

    def __setattr__(self, name, value):
        raise AttributeError("KnotVector is immutable")

    @property
    def n_internal(self) -> int:
        return self.values.size - 2

    @property
    def start(self) -> float:
        return float(self.values[0])

    @property
    def end(self) -> float:
        return float(self.values[-1])

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.all(self.values == other.values))

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"KnotVector(n_internal={self.n_internal}, range=[{self.start:g}, {self.end:g}], equidistant={self.equidistant})"


def as_knots(knots) -> KnotVector:
    return knots if isinstance(knots, KnotVector) else KnotVector(knots)


def _check_support(support, n_knots: int) -> tuple[tuple[int, int], ...]:
    out = tuple((int(i), int(j)) for i, j in support)
    last = -1
    for i, j in out:
        if not 0 <= i < j <= n_knots - 1:
            raise ValueError(f"support interval ({i}, {j}) is not a valid knot index pair")
        if i < last:
            raise ValueError("support intervals must be sorted and non-overlapping")
        last = j
    return out


def _runs(mask: np.ndarray) -> tuple[tuple[int, int], ...]:
    """Maximal runs of active pieces, as knot index pairs ``(first, last)``."""
    if not mask.any():
        return ()
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return tuple((int(a), int(b)) for a, b in zip(edges[::2], edges[1::2]))


class PiecewisePolynomial:
    """Piecewise polynomial of degree at most ``order`` held by derivatives at knots.

    Parameters
    ----------
    knots : KnotVector or array_like
        Knots of the whole range.
    order : int
        Highest derivative stored (polynomial degree bound).
    support : sequence of (int, int)
        Sorted, non-overlapping knot index pairs ``(i, j)``, ``j > i``.
    der : array_like, shape (rows, order + 1)
        Derivative rows for the knots ``i..j`` of every support interval, stacked
        in interval order.
    """

    __slots__ = ("knots", "order", "support", "der", "_dense")

    def __init__(self, knots, order: int, support, der):
        knots = as_knots(knots)
        order = int(order)
        if order < 0:
            raise ValueError("order must be nonnegative")
        support = _check_support(support, len(knots))
        der = np.array(der, dtype=float)
        if der.size == 0:
            der = der.reshape(0, order + 1)
        rows = sum(j - i + 1 for i, j in support)
        if der.ndim != 2 or der.shape != (rows, order + 1):
            raise ValueError(
                f"derivative matrix has shape {der.shape}, support requires ({rows}, {order + 1})"
            )
        der.setflags(write=False)
        dense = np.zeros((len(knots), order + 1))
        pos = 0
        for i, j in support:
            block = der[pos:pos + j - i + 1]
            dense[i:j + 1, :order] = block[:, :order]
            dense[i:j, order] = block[:-1, order]
            pos += j - i + 1
        dense.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "der", der)
        object.__setattr__(self, "_dense", dense)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @classmethod
    def from_dense(cls, knots, order: int, dense, active=None):
        """Build from a whole-range derivative matrix (right-limit convention).

        ``active`` marks the pieces ``[xi[p], xi[p+1])`` that belong to the
        support; by default every piece with a nonzero entry is active.
        """
        knots = as_knots(knots)
        dense = np.asarray(dense, dtype=float)
        if dense.shape != (len(knots), order + 1):
            raise ValueError(f"dense matrix must have shape ({len(knots)}, {order + 1})")
        if active is None:
            active = np.any(dense[:-1] != 0, axis=1) | np.any(dense[1:, :order] != 0, axis=1)
        support = _runs(np.asarray(active, dtype=bool))
        blocks = []
        for i, j in support:
            block = dense[i:j + 1].copy()
            block[-1, order] = block[-2, order]
            blocks.append(block)
        der = np.vstack(blocks) if blocks else np.zeros((0, order + 1))
        return cls(knots, order, support, der)

    @classmethod
    def zero(cls, knots, order: int):
        return cls(knots, order, (), np.zeros((0, order + 1)))

    @property
    def dense(self) -> np.ndarray:
        return self._dense

    @property
    def active_pieces(self) -> np.ndarray:
        mask = np.zeros(len(self.knots) - 1, dtype=bool)
        for i, j in self.support:
            mask[i:j] = True
        return mask

    @property
    def is_zero(self) -> bool:
        return not self.support

    def blocks(self) -> Iterator[tuple[int, int, np.ndarray]]:
        pos = 0
        for i, j in self.support:
            yield i, j, self.der[pos:pos + j - i + 1]
            pos += j - i + 1

    def support_length(self) -> float:
        xi = self.knots.values
        return float(sum(xi[j] - xi[i] for i, j in self.support))

    def evaluate(self, x, deriv: int = 0, anchor: str = "left"):
        """Value of the ``deriv``-th derivative at ``x`` (scalar or array)."""
        vals = _evaluate_dense(self.knots, self._dense[None], x, deriv, anchor)[0]
        return float(vals) if np.ndim(x) == 0 else vals

    __call__ = evaluate

    def __repr__(self) -> str:
        return f"{type(self).__name__}(order={self.order}, n_internal={self.knots.n_internal}, support={list(self.support)})"


class Spline(PiecewisePolynomial):
    """Spline with zero boundary conditions; see :func:`validate_spline`."""

    __slots__ = ()


class SplineFamily(Sequence):
    """Splines sharing one knot vector and order."""

    __slots__ = ("knots", "order", "members", "_stack")

    def __init__(self, members: Iterable[PiecewisePolynomial], knots=None, order=None):
        members = tuple(members)
        if knots is None or order is None:
            if not members:
                raise ValueError("an empty family needs explicit knots and order")
            knots = members[0].knots if knots is None else knots
            order = members[0].order if order is None else order
        knots = as_knots(knots)
        for s in members:
            if s.knots != knots or s.order != order:
                raise ValueError("all members of a family must share knots and order")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "order", int(order))
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "_stack", None)

    def __setattr__(self, name, value):
        raise AttributeError("SplineFamily is immutable")

    @classmethod
    def from_dense_stack(cls, knots, order: int, stack, active=None, cls_member=Spline):
        knots = as_knots(knots)
        stack = np.asarray(stack, dtype=float)
        members = [
            cls_member.from_dense(knots, order, stack[a], None if active is None else active[a])
            for a in range(stack.shape[0])
        ]
        return cls(members, knots, order)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return SplineFamily(self.members[idx], self.knots, self.order)
        return self.members[idx]

    def __iter__(self):
        return iter(self.members)

    @property
    def dense_stack(self) -> np.ndarray:
        """Dense derivative matrices, shape ``(members, n + 2, order + 1)``."""
        if self._stack is None:
            if self.members:
                stack = np.stack([s.dense for s in self.members])
            else:
                stack = np.zeros((0, len(self.knots), self.order + 1))
            stack.setflags(write=False)
            object.__setattr__(self, "_stack", stack)
        return self._stack

    @property
    def active_mask(self) -> np.ndarray:
        if not self.members:
            return np.zeros((0, len(self.knots) - 1), dtype=bool)
        return np.stack([s.active_pieces for s in self.members])

    def evaluate(self, x, deriv: int = 0, anchor: str = "left") -> np.ndarray:
        """Values of all members, shape ``(members, len(x))``."""
        return _evaluate_dense(self.knots, self.dense_stack, np.atleast_1d(x), deriv, anchor)

    def __repr__(self) -> str:
        return f"SplineFamily(size={len(self)}, order={self.order}, n_internal={self.knots.n_internal})"


# --------------------------------------------------------------------------
# evaluation


@lru_cache(maxsize=None)
def _inv_factorials(k: int) -> np.ndarray:
    return np.array([1.0 / math.factorial(m) for m in range(k + 1)])


def piece_index(knots: KnotVector, x) -> np.ndarray:
    """Index ``p`` with ``x`` in ``(xi[p], xi[p+1]]`` (range start maps to 0)."""
    xi = knots.values
    x = np.asarray(x, dtype=float)
    if np.any(x < xi[0]) or np.any(x > xi[-1]) or np.any(np.isnan(x)):
        raise ValueError(f"evaluation point outside the knot range [{xi[0]}, {xi[-1]}]")
    return np.clip(np.searchsorted(xi, x, side="left") - 1, 0, xi.size - 2)


def _evaluate_dense(knots: KnotVector, stack: np.ndarray, x, deriv: int, anchor: str) -> np.ndarray:
    k = stack.shape[2] - 1
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    if deriv < 0:
        raise ValueError("derivative order must be nonnegative")
    if deriv > k:
        return np.zeros((stack.shape[0],) + x.shape)
    p = piece_index(knots, flat)
    xi = knots.values
    fact = _inv_factorials(k - deriv)
    if anchor == "left":
        h = flat - xi[p]
        powers = h[:, None] ** np.arange(k - deriv + 1) * fact
        coeffs = stack[:, p, deriv:]
    elif anchor == "right":
        h = flat - xi[p + 1]
        powers = h[:, None] ** np.arange(k - deriv + 1) * fact
        coeffs = stack[:, p + 1, deriv:].copy()
        # the top derivative on the piece is the right limit stored at xi[p]
        coeffs[:, :, -1] = stack[:, p, k]
    else:
        raise ValueError("anchor must be 'left' or 'right'")
    out = np.einsum("apm,pm->ap", coeffs, powers)
    return out.reshape((stack.shape[0],) + x.shape)


def evaluate(s: PiecewisePolynomial, x, deriv: int = 0, anchor: str = "left"):
    """Value of the ``deriv``-th derivative of ``s`` at ``x``."""
    return s.evaluate(x, deriv, anchor)


# --------------------------------------------------------------------------
# validity


@dataclass(frozen=True)
class SmoothnessReport:
    """Smoothness residuals of a derivative matrix.

    ``residuals[i, j]`` is the scaled mismatch for derivative ``j`` at knot
    ``i``; column ``order`` records the top-derivative storage convention.
    """

    residuals: np.ndarray
    tol: float
    per_knot: np.ndarray = field(init=False)
    max_residual: float = field(init=False)

    def __post_init__(self):
        per_knot = self.residuals.max(axis=1) if self.residuals.size else np.zeros(self.residuals.shape[0])
        object.__setattr__(self, "per_knot", per_knot)
        object.__setattr__(self, "max_residual", float(per_knot.max(initial=0.0)))

    @property
    def valid(self) -> bool:
        return self.max_residual <= self.tol


def validate_spline(s: PiecewisePolynomial, tol: float = TOL_SMOOTH) -> SmoothnessReport:
    """Check continuity of derivatives ``0..k-1`` and the zero boundary conditions.

    Function values are compared in absolute terms; every higher derivative
    column is scaled by ``max(1, max|column|)`` because derivatives grow with
    the knot density.
    """
    k = s.order
    xi = s.knots.values
    res = np.zeros((xi.size, k + 1))
    scale = np.ones(k + 1)
    if s.der.shape[0]:
        scale[1:] = np.maximum(1.0, np.abs(s.der[:, 1:]).max(axis=0))
    fact = _inv_factorials(k)
    for i, j, block in s.blocks():
        # interval ends: derivatives below the top one vanish
        res[i, :k] = np.maximum(res[i, :k], np.abs(block[0, :k]) / scale[:k])
        res[j, :k] = np.maximum(res[j, :k], np.abs(block[-1, :k]) / scale[:k])
        h = np.diff(xi[i:j + 1])
        for jj in range(k):
            m = np.arange(jj, k + 1)
            pred = (block[:-1, jj:] * (h[:, None] ** (m - jj)) * fact[: k + 1 - jj]).sum(axis=1)
            err = np.abs(pred - block[1:, jj]) / scale[jj]
            res[i + 1:j + 1, jj] = np.maximum(res[i + 1:j + 1, jj], err)
        res[j, k] = max(res[j, k], abs(block[-1, k] - block[-2, k]) / scale[k])
    return SmoothnessReport(res, tol)


# --------------------------------------------------------------------------
# algebra


def lincomb(family: SplineFamily, coeffs, prune_tol: float = PRUNE_TOL) -> SplineFamily:
    """Linear combinations ``coeffs @ family`` as a new family.

    Parameters
    ----------
    family : SplineFamily
    coeffs : array_like, shape (r, len(family)) or (len(family),)
    prune_tol : float
        A piece is dropped from the support when every entry of both its end
        rows is at most ``prune_tol`` times the largest magnitude the
        combination could produce in that column.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 1:
        c = c[None, :]
    if c.ndim != 2 or c.shape[1] != len(family):
        raise ValueError(f"coefficient matrix must have {len(family)} columns, got shape {c.shape}")
    stack = family.dense_stack
    k = family.order
    if len(family) == 0:
        return SplineFamily([Spline.zero(family.knots, k)] * c.shape[0], family.knots, k)
    combo = np.tensordot(c, stack, axes=(1, 0))
    bound = np.abs(c) @ np.abs(stack).max(axis=1)  # (r, k+1)
    thresh = prune_tol * bound[:, None, :]
    big = np.abs(combo) > thresh
    covered = (c != 0).astype(float) @ family.active_mask.astype(float) > 0
    active = covered & (big[:, :-1, :].any(axis=2) | big[:, 1:, :k].any(axis=2))
    return SplineFamily.from_dense_stack(family.knots, k, combo, active)


def scale(s: PiecewisePolynomial, factor: float) -> PiecewisePolynomial:
    if factor == 0:
        return type(s).zero(s.knots, s.order)
    return type(s)(s.knots, s.order, s.support, s.der * factor)


def add(a: Spline, b: Spline, alpha: float = 1.0, beta: float = 1.0) -> Spline:
    """``alpha * a + beta * b`` for splines over the same knots."""
    if a.knots != b.knots or a.order != b.order:
        raise ValueError("splines must share knots and order")
    return lincomb(SplineFamily([a, b]), [alpha, beta])[0]


# --------------------------------------------------------------------------
# calculus


def integra(s: PiecewisePolynomial) -> PiecewisePolynomial:
    """Antiderivative vanishing at the range start (a piecewise polynomial of order ``k + 1``)."""
    k = s.order
    xi = s.knots.values
    d = s.dense
    out = np.zeros((xi.size, k + 2))
    out[:, 1:] = d
    h = np.diff(xi)
    fact = _inv_factorials(k + 1)
    steps = (d[:-1] * h[:, None] ** np.arange(1, k + 2) * fact[1:]).sum(axis=1)
    out[1:, 0] = np.cumsum(steps)
    out[-1, k + 1] = 0.0
    if s.is_zero:
        return PiecewisePolynomial.zero(s.knots, k + 1)
    first = s.support[0][0]
    active = np.zeros(xi.size - 1, dtype=bool)
    active[first:] = True
    return PiecewisePolynomial.from_dense(s.knots, k + 1, out, active)


@lru_cache(maxsize=None)
def gauss_legendre(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on ``[0, 1]``; exact for degree ``2q - 1``."""
    x, w = np.polynomial.legendre.leggauss(q)
    return (x + 1.0) / 2.0, w / 2.0


def _piece_values(knots: KnotVector, stack: np.ndarray, q: int, pieces=None) -> tuple[np.ndarray, np.ndarray]:
    """Values at Gauss nodes per piece: ``(members, pieces, q)`` and weights ``(pieces, q)``."""
    xi = knots.values
    k = stack.shape[2] - 1
    if pieces is None:
        pieces = np.arange(xi.size - 1)
    h = xi[pieces + 1] - xi[pieces]
    t, w = gauss_legendre(q)
    local = h[:, None] * t[None, :]  # (P, q)
    powers = local[:, :, None] ** np.arange(k + 1) * _inv_factorials(k)
    vals = np.einsum("apm,pqm->apq", stack[:, pieces, :], powers)
    return vals, h[:, None] * w[None, :]


def inner_product(a: PiecewisePolynomial, b: PiecewisePolynomial) -> float:
    """Exact L2 inner product over the shared support pieces."""
    if a.knots != b.knots:
        raise ValueError("inner product needs identical knot vectors (refine first)")
    shared = np.flatnonzero(a.active_pieces & b.active_pieces)
    if shared.size == 0:
        return 0.0
    q = (a.order + b.order) // 2 + 1
    va, w = _piece_values(a.knots, a.dense[None], q, shared)
    vb, _ = _piece_values(b.knots, b.dense[None], q, shared)
    return float(np.sum(va[0] * vb[0] * w))


def norm(s: PiecewisePolynomial) -> float:
    return math.sqrt(max(inner_product(s, s), 0.0))


def gramian(family: SplineFamily, other: SplineFamily | None = None) -> np.ndarray:
    """Matrix of inner products ``<family[a], other[b]>`` (``other`` defaults to ``family``)."""
    other = family if other is None else other
    if family.knots != other.knots:
        raise ValueError("gramian needs identical knot vectors (refine first)")
    if len(family) == 0 or len(other) == 0:
        return np.zeros((len(family), len(other)))
    q = (family.order + other.order) // 2 + 1
    va, w = _piece_values(family.knots, family.dense_stack, q)
    sw = np.sqrt(w).ravel()
    A = va.reshape(len(family), -1) * sw
    if other is family:
        G = A @ A.T
        return (G + G.T) / 2.0
    vb, _ = _piece_values(other.knots, other.dense_stack, q)
    return A @ (vb.reshape(len(other), -1) * sw).T


# --------------------------------------------------------------------------
# knot refinement


def _match_knots(old: np.ndarray, new: np.ndarray, rtol: float = 1e-12) -> None:
    span = old[-1] - old[0]
    atol = rtol * max(span, abs(old[0]), abs(old[-1]))
    if abs(new[0] - old[0]) > atol or abs(new[-1] - old[-1]) > atol:
        raise ValueError("refined knots must have the same range endpoints")
    pos = np.clip(np.searchsorted(new, old), 0, new.size - 1)
    lo = np.clip(pos - 1, 0, new.size - 1)
    dist = np.minimum(np.abs(new[pos] - old), np.abs(new[lo] - old))
    if np.any(dist > atol):
        raise ValueError("new knots must contain every original knot")


def union_knots(a, b, rtol: float = 1e-12) -> KnotVector:
    """Sorted union of two knot vectors, merging values closer than ``rtol`` of the range."""
    a, b = as_knots(a), as_knots(b)
    v = np.concatenate((a.values, b.values))
    v.sort()
    atol = rtol * max(v[-1] - v[0], abs(v[0]), abs(v[-1]))
    keep = np.concatenate(([True], np.diff(v) > atol))
    merged = v[keep]
    # prefer exact values of ``a`` where merged
    ia = np.searchsorted(merged, a.values - atol)
    merged[np.clip(ia, 0, merged.size - 1)] = a.values
    return KnotVector(merged)


def refine(s: PiecewisePolynomial, new_knots) -> PiecewisePolynomial:
    """The same function represented over a superset of its knots."""
    new = as_knots(new_knots)
    if new == s.knots:
        return s
    old = s.knots.values
    nv = new.values
    _match_knots(old, nv)
    k = s.order
    d = s.dense
    atol = 1e-12 * max(old[-1] - old[0], abs(old[0]), abs(old[-1]))
    p = np.clip(np.searchsorted(old, nv + atol, side="right") - 1, 0, old.size - 2)
    h = nv - old[p]
    fact = _inv_factorials(k)
    out = np.empty((nv.size, k + 1))
    for j in range(k + 1):
        m = np.arange(j, k + 1)
        out[:, j] = (d[p][:, j:] * h[:, None] ** (m - j) * fact[: k + 1 - j]).sum(axis=1)
    out[-1, k] = 0.0
    active = s.active_pieces[p[:-1]]
    return type(s).from_dense(new, k, out, active)


def refine_family(family: SplineFamily, new_knots) -> SplineFamily:
    new = as_knots(new_knots)
    if new == family.knots:
        return family
    members = [refine(s, new) for s in family]
    return SplineFamily(members, new, family.order)


# --------------------------------------------------------------------------
# serialization


def spline_to_dict(s: PiecewisePolynomial) -> dict:
    return {
        "support": [list(p) for p in s.support],
        "der": s.der.tolist(),
    }


def family_to_dict(family: SplineFamily) -> dict:
    """Self-describing dictionary; floats round-trip exactly through JSON."""
    return {
        "kind": "SplineFamily",
        "knots": family.knots.values.tolist(),
        "order": family.order,
        "members": [spline_to_dict(s) for s in family],
    }


def family_from_dict(data: dict, member_cls=Spline) -> SplineFamily:
    knots = KnotVector(data["knots"])
    order = int(data["order"])
    members = [
        member_cls(knots, order, m["support"], np.array(m["der"], dtype=float).reshape(-1, order + 1))
        for m in data["members"]
    ]
    return SplineFamily(members, knots, order)


def dumps(family: SplineFamily | PiecewisePolynomial, **kwargs) -> str:
    if isinstance(family, PiecewisePolynomial):
        family = SplineFamily([family])
    return json.dumps(family_to_dict(family), **kwargs)


def loads(text: str) -> SplineFamily:
    return family_from_dict(json.loads(text))

