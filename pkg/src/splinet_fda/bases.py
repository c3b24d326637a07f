"""B-spline bases and their orthonormalizations.

The B-splines are produced by the order recursion acting directly on the
derivative values at the knots.  Three orthonormal variants are available:
one-sided Gram-Schmidt, a two-sided symmetric Gram-Schmidt and the dyadic
splinet, whose members sit on a net of levels with growing supports.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg

from .spline_core import (
    KnotVector,
    Spline,
    SplineFamily,
    as_knots,
    gramian,
    lincomb,
)

BASIS_TYPES = ("bspline", "gram_schmidt", "two_sided", "splinet")

COND_LIMIT = 1e12
EIG_FLOOR = 1e-14


class SingularBasisError(ArithmeticError):
    """Raised when a Gramian is too ill-conditioned to orthonormalize."""


@dataclass(frozen=True)
class NetPlacement:
    level: int
    position: int
    tuple_number: int
    in_tuple: int
    location: float


@dataclass(frozen=True)
class DyadicNet:
    """Grouping of basis members into k-tuples placed on dyadic levels.

    Tuple ``m`` (1-based, left to right) sits on level ``l`` where
    ``m = 2**(l-1) * (2p + 1)``; ``p`` is its position within the level.
    """

    order: int
    n_members: int
    tuples: tuple[tuple[int, ...], ...]

    @property
    def n_tuples(self) -> int:
        return len(self.tuples)

    @property
    def levels(self) -> int:
        return self.n_tuples.bit_length()

    @property
    def complete(self) -> bool:
        size = max(self.order, 1)
        return self.n_tuples == 2**self.levels - 1 and self.n_members == size * self.n_tuples

    @staticmethod
    def level_of(m: int) -> int:
        return (m & -m).bit_length()

    @staticmethod
    def position_of(m: int) -> int:
        return m >> (DyadicNet.level_of(m))

    def tuples_per_level(self) -> dict[int, int]:
        counts = {lvl: 0 for lvl in range(1, self.levels + 1)}
        for m in range(1, self.n_tuples + 1):
            counts[self.level_of(m)] += 1
        return counts

    def processing_order(self) -> list[int]:
        """Tuple numbers sorted bottom-up by level, left to right within a level."""
        return sorted(range(1, self.n_tuples + 1), key=lambda m: (self.level_of(m), m))


def dyadic_net(n_members: int, order: int) -> DyadicNet:
    size = max(order, 1)
    tuples = tuple(
        tuple(range(start, min(start + size, n_members))) for start in range(0, n_members, size)
    )
    return DyadicNet(order, n_members, tuples)


@dataclass(frozen=True)
class BasisSet:
    """A spline basis with its type tag and dyadic-net placement.

    ``coef`` expresses every member in the B-spline basis over the same knots
    (row ``i`` gives member ``i``).
    """

    family: SplineFamily
    basis_type: str
    net_placement: tuple[NetPlacement, ...]
    coef: np.ndarray
    net: DyadicNet

    @property
    def knots(self) -> KnotVector:
        return self.family.knots

    @property
    def order(self) -> int:
        return self.family.order

    @property
    def orthonormal(self) -> bool:
        return self.basis_type != "bspline"

    def __len__(self) -> int:
        return len(self.family)


def _locations(knots: KnotVector, order: int, n_members: int) -> np.ndarray:
    xi = knots.values
    loc = np.empty(n_members)
    for l in range(n_members):
        sup = xi[l:l + order + 2]
        mid = sup.size // 2
        loc[l] = sup[mid] if sup.size % 2 else 0.5 * (sup[mid - 1] + sup[mid])
    return loc


def _placements(knots: KnotVector, order: int, net: DyadicNet) -> tuple[NetPlacement, ...]:
    loc = _locations(knots, order, net.n_members)
    out = [None] * net.n_members
    for m, members in enumerate(net.tuples, start=1):
        for r, idx in enumerate(members):
            out[idx] = NetPlacement(net.level_of(m), net.position_of(m), m, r, float(loc[idx]))
    return tuple(out)


# --------------------------------------------------------------------------
# B-splines


def _bspline_stack(knots: KnotVector, k: int) -> np.ndarray:
    """Dense derivative matrices of the order-``k`` B-splines, ``(n-k+1, n+2, k+1)``."""
    xi = knots.values
    n2 = xi.size
    n = n2 - 2
    stack = np.zeros((n + 1, n2, 1))
    stack[np.arange(n + 1), np.arange(n + 1), 0] = 1.0
    for j in range(1, k + 1):
        m = n - j + 1
        l = np.arange(m)
        low, high = stack[:-1], stack[1:]
        left_span = (xi[l + j] - xi[l])[:, None]
        right_span = (xi[l + j + 1] - xi[l + 1])[:, None]
        lam_left = (xi[None, :] - xi[l][:, None]) / left_span
        lam_right = (xi[l + j + 1][:, None] - xi[None, :]) / right_span
        new = np.zeros((m, n2, j + 1))
        for i in range(j + 1):
            col = np.zeros((m, n2))
            if i >= 1:
                col += i / left_span * low[:, :, i - 1] - i / right_span * high[:, :, i - 1]
            if i <= j - 1:
                col += lam_left * low[:, :, i] + lam_right * high[:, :, i]
            new[:, :, i] = col
        stack = new
    return stack


def build_bsplines(knots, k: int) -> BasisSet:
    """The ``n - k + 1`` B-splines of order ``k`` with zero boundary conditions."""
    knots = as_knots(knots)
    k = int(k)
    n = knots.n_internal
    if k < 0:
        raise ValueError("order must be nonnegative")
    if n < k:
        raise ValueError(f"need at least k={k} internal knots, got {n}")
    stack = _bspline_stack(knots, k)
    m = stack.shape[0]
    members = []
    for l in range(m):
        active = np.zeros(n + 1, dtype=bool)
        active[l:l + k + 1] = True
        members.append(Spline.from_dense(knots, k, stack[l], active))
    family = SplineFamily(members, knots, k)
    net = dyadic_net(m, k)
    return BasisSet(family, "bspline", _placements(knots, k, net), np.eye(m), net)


# --------------------------------------------------------------------------
# orthonormalization


def inv_sqrt(G: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a positive definite matrix."""
    w, U = np.linalg.eigh((G + G.T) / 2.0)
    if w[0] <= EIG_FLOOR * max(w[-1], 0.0) or w[-1] <= 0:
        raise SingularBasisError("Gram matrix is numerically singular")
    return (U / np.sqrt(w)) @ U.T


def _check_conditioning(G: np.ndarray) -> None:
    d = np.sqrt(np.diag(G))
    if np.any(d <= 0):
        raise SingularBasisError("basis contains a zero member")
    w = np.linalg.eigvalsh(G / np.outer(d, d))
    if w[0] <= 0 or w[-1] / w[0] > COND_LIMIT:
        raise SingularBasisError(f"B-spline Gramian condition number exceeds {COND_LIMIT:g}")


def _cholesky_inverse(G: np.ndarray) -> np.ndarray:
    try:
        L = linalg.cholesky(G, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularBasisError("Gram matrix is not positive definite") from exc
    return linalg.solve_triangular(L, np.eye(G.shape[0]), lower=True)


def _gram_schmidt_coef(G: np.ndarray) -> np.ndarray:
    # rows of L^{-1} are Gram-Schmidt applied to the members in index order
    return _cholesky_inverse(G)


def _orthogonalize_block(G: np.ndarray, C: np.ndarray, block, done) -> None:
    """Orthonormalize ``block`` against rows ``done`` of ``C`` and symmetrically within itself."""
    M = G.shape[0]
    E = np.zeros((len(block), M))
    E[np.arange(len(block)), block] = 1.0
    if len(done):
        P = C[done]
        E = E - (E @ G @ P.T) @ P
    C[block] = inv_sqrt(E @ G @ E.T) @ E


def _two_sided_coef(G: np.ndarray, k: int) -> np.ndarray:
    M = G.shape[0]
    C = np.zeros((M, M))
    size = max(k, 1)
    if M <= size:
        _orthogonalize_block(G, C, list(range(M)), [])
        return C
    mid = size + (M - size) % 2
    a = (M - mid) // 2
    left = np.arange(a)
    right = np.arange(M - 1, M - a - 1, -1)
    if a:
        C[np.ix_(left, left)] = _cholesky_inverse(G[np.ix_(left, left)])
        C[np.ix_(right, right)] = _cholesky_inverse(G[np.ix_(right, right)])
    _orthogonalize_block(G, C, list(range(a, a + mid)), list(left) + list(right))
    return C


def _splinet_coef(G: np.ndarray, net: DyadicNet) -> np.ndarray:
    M = G.shape[0]
    C = np.zeros((M, M))
    done: list[int] = []
    for m in net.processing_order():
        block = list(net.tuples[m - 1])
        _orthogonalize_block(G, C, block, done)
        done.extend(block)
    return C


def orthonormalize(b: BasisSet, method: str = "splinet") -> BasisSet:
    """Orthonormal basis with the same span as the B-spline basis ``b``.

    ``method`` is one of ``'gram_schmidt'``, ``'two_sided'`` or ``'splinet'``.
    """
    if b.basis_type != "bspline":
        raise ValueError("orthonormalize expects a B-spline basis")
    if method not in BASIS_TYPES[1:]:
        raise ValueError(f"unknown orthonormalization method {method!r}")
    G = gramian(b.family)
    _check_conditioning(G)
    if method == "gram_schmidt":
        C = _gram_schmidt_coef(G)
    elif method == "two_sided":
        C = _two_sided_coef(G, b.order)
    else:
        C = _splinet_coef(G, b.net)
    family = lincomb(b.family, C)
    return BasisSet(family, method, b.net_placement, C, b.net)


def build_splinet(b: BasisSet) -> tuple[BasisSet, DyadicNet]:
    os_ = orthonormalize(b, "splinet")
    return os_, os_.net


@lru_cache(maxsize=256)
def _cached_basis(knots: KnotVector, k: int, basis_type: str) -> BasisSet:
    bs = build_bsplines(knots, k)
    if basis_type == "bspline":
        return bs
    return orthonormalize(bs, basis_type)


def build_basis(knots, k: int, basis_type: str = "splinet") -> BasisSet:
    """Basis of the given type over ``knots``; results are cached."""
    if basis_type not in BASIS_TYPES:
        raise ValueError(f"unknown basis type {basis_type!r}")
    return _cached_basis(as_knots(knots), int(k), basis_type)


def splinet(knots, k: int = 3) -> tuple[BasisSet, BasisSet]:
    """B-spline basis and the corresponding splinet."""
    return build_basis(knots, k, "bspline"), build_basis(knots, k, "splinet")


def total_relative_support(b: BasisSet) -> float:
    xi = b.knots.values
    return sum(s.support_length() for s in b.family) / (xi[-1] - xi[0])


def net_table(b: BasisSet) -> list[dict]:
    """Per-member rows for drawing the basis on its dyadic net."""
    xi = b.knots.values
    rows = []
    for idx, (s, place) in enumerate(zip(b.family, b.net_placement)):
        start = xi[s.support[0][0]] if s.support else float("nan")
        end = xi[s.support[-1][1]] if s.support else float("nan")
        rows.append(
            {
                "member": idx,
                "location": place.location,
                "level": place.level,
                "position": place.position,
                "tuple": place.tuple_number,
                "support_start": float(start),
                "support_end": float(end),
            }
        )
    return rows
