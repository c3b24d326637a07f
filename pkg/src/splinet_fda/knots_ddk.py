"""Data-driven knot selection.

Knots are added one at a time at the grid point giving the largest drop of
the average squared error of piecewise constant fits.  Each curve gets its own
piecewise constant fit, all curves share the knots.  The number of knots kept
is decided by comparing the relative error drops with those observed on white
noise (the reference curve).

Segments are half-open index ranges ``[a, b)`` of grid points; the last
segment also holds the final grid point.  Candidates are the interior grid
points ``1 .. G-2``, so selected knots always lie strictly inside the range.
"""

from __future__ import annotations

import heapq
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .projection import DiscreteCurveSet
from .spline_core import KnotVector, as_knots

STOP_RULES = ("first_crossing", "literal_max", "none")
ZERO_AMSE = 1e-24  # relative to the mean square of the data


@dataclass(frozen=True, eq=False)
class KnotSelection:
    """Selected knots with the full greedy history.

    ``added[r]``, ``added_index[r]`` and ``history[r]`` describe the ``r+1``-th
    addition; ``history`` holds the error after it and ``amse0`` the error of
    the starting knots.  ``eps[r]`` is the relative drop of that addition.
    """

    knots: KnotVector
    start_knots: KnotVector
    added: np.ndarray
    added_index: np.ndarray
    amse0: float
    history: np.ndarray
    eps: np.ndarray
    n_selected: int
    rule: str = "first_crossing"

    def to_dict(self) -> dict:
        return {
            "knots": [float(v) for v in self.knots.values],
            "start_knots": [float(v) for v in self.start_knots.values],
            "added": [float(v) for v in self.added],
            "added_index": [int(i) for i in self.added_index],
            "amse0": float(self.amse0),
            "history": [float(v) for v in self.history],
            "eps": [float(v) for v in self.eps],
            "n_selected": int(self.n_selected),
            "rule": self.rule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnotSelection":
        return cls(
            KnotVector(d["knots"]),
            KnotVector(d["start_knots"]),
            np.array(d["added"], dtype=float),
            np.array(d["added_index"], dtype=int),
            float(d["amse0"]),
            np.array(d["history"], dtype=float),
            np.array(d["eps"], dtype=float),
            int(d["n_selected"]),
            d.get("rule", "first_crossing"),
        )


@dataclass(frozen=True, eq=False)
class ReferenceCurve:
    """Average relative error drops of the greedy selector on white noise."""

    grid_len: int
    M: int
    eps0: np.ndarray
    seed: int | None = None

    @property
    def r_max(self) -> int:
        return self.eps0.size

    def to_dict(self) -> dict:
        return {"grid_len": self.grid_len, "M": self.M, "seed": self.seed, "eps0": [float(v) for v in self.eps0]}

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceCurve":
        return cls(int(d["grid_len"]), int(d["M"]), np.array(d["eps0"], dtype=float), d.get("seed"))


# --------------------------------------------------------------------------
# greedy machinery


def _segment(X: np.ndarray, a: int, b: int, cand_hi: int) -> tuple[float, float, int]:
    """SSE of ``[a, b)`` and the best split ``(gain, index)`` with index <= cand_hi."""
    y = X[:, a:b]
    y = y - y.mean(axis=1, keepdims=True)
    sse = float(np.sum(y * y))
    m = b - a
    top = min(b - 1, cand_hi) - a  # largest admissible offset
    if top < 1:
        return sse, -1.0, -1
    cs = np.cumsum(y[:, :top], axis=1)
    j = np.arange(1, top + 1)
    gain = np.sum(cs * cs, axis=0) * m / (j * (m - j))
    i = int(np.argmax(gain))
    return sse, float(gain[i]), a + 1 + i


class _Greedy:
    def __init__(self, X: np.ndarray, start_idx, rng=None, rho: float = 1.0):
        self.X = X
        self.C, self.G = X.shape
        self.cand_hi = self.G - 2
        self.rho = rho
        self.rng = rng
        bounds = sorted({0, *map(int, start_idx), self.G})
        self.stats = {}
        self.heap = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            self._add_segment(a, b)
        self.scale = float(np.mean(X * X)) if X.size else 0.0

    def _add_segment(self, a: int, b: int) -> None:
        sse, gain, c = _segment(self.X, a, b, self.cand_hi)
        self.stats[a] = (b, sse)
        if c >= 0:
            # ties on the gain resolve to the leftmost candidate
            heapq.heappush(self.heap, (-gain, c, a, b))

    @property
    def sse(self) -> float:
        return sum(v[1] for v in self.stats.values())

    def amse(self) -> float:
        return self.sse / (self.C * self.G)

    def _best(self) -> tuple[int, int]:
        if self.rho < 1.0:
            take = max(1, int(round(self.rho * self.C)))
            rows = np.sort(self.rng.choice(self.C, size=take, replace=False))
            Xs = self.X[rows]
            best = (0.0, -1, -1)
            for a in sorted(self.stats):
                _, g, c = _segment(Xs, a, self.stats[a][0], self.cand_hi)
                if c >= 0 and (best[1] < 0 or g > -best[0]):
                    best = (-g, c, a)
            return best[1], best[2]
        while self.heap:
            _, c, a, b = self.heap[0]
            if self.stats.get(a, (None,))[0] == b:
                return c, a
            heapq.heappop(self.heap)
        return -1, -1

    def step(self) -> int:
        """Add the best knot; returns its grid index or -1 when none remains."""
        c, a = self._best()
        if c < 0:
            return -1
        b = self.stats[a][0]
        self._add_segment(a, c)
        self._add_segment(c, b)
        return c


def _grid_indices(args: np.ndarray, knots: KnotVector) -> np.ndarray:
    span = args[-1] - args[0]
    v = knots.values
    if abs(v[0] - args[0]) > 1e-9 * span or abs(v[-1] - args[-1]) > 1e-9 * span:
        raise ValueError("knot range must coincide with the data grid range")
    idx = np.searchsorted(args, v[1:-1])
    idx = np.clip(idx, 0, args.size - 1)
    lo = np.clip(idx - 1, 0, args.size - 1)
    idx = np.where(np.abs(args[lo] - v[1:-1]) < np.abs(args[idx] - v[1:-1]), lo, idx)
    if np.any(np.abs(args[idx] - v[1:-1]) > 1e-9 * span):
        raise ValueError("knots must be points of the data grid")
    return idx


def _matrix(data: DiscreteCurveSet) -> np.ndarray:
    if not data.is_common:
        raise ValueError("knot selection needs curves on a common grid")
    return data.values


def amse(data: DiscreteCurveSet, knots) -> float:
    """Average squared error of per-curve piecewise constant fits on ``knots``."""
    X = _matrix(data)
    idx = _grid_indices(data.args, as_knots(knots))
    return _Greedy(X, idx).amse()


def add_knot(data: DiscreteCurveSet, current: KnotSelection | KnotVector | None = None) -> KnotSelection:
    """One greedy step from ``current`` (its knots become the new selection's knots)."""
    X = _matrix(data)
    args = data.args
    if current is None:
        current = KnotVector([args[0], args[-1]])
    if isinstance(current, KnotSelection):
        start, added, added_idx = current.start_knots, list(current.added), list(current.added_index)
        hist, eps, a0 = list(current.history), list(current.eps), current.amse0
        knots = current.knots
    else:
        knots = as_knots(current)
        start, added, added_idx, hist, eps = knots, [], [], [], []
        a0 = None
    g = _Greedy(X, _grid_indices(args, knots))
    before = g.amse()
    if a0 is None:
        a0 = before
    c = g.step()
    if c < 0:
        raise ValueError("no candidate grid points remain")
    after = g.amse()
    added.append(args[c])
    added_idx.append(c)
    hist.append(after)
    eps.append(_rel_drop(before, after))
    new_knots = KnotVector(np.sort(np.r_[knots.values, args[c]]))
    return KnotSelection(new_knots, start, np.array(added), np.array(added_idx, dtype=int), a0,
                         np.array(hist), np.array(eps), len(added), "none")


def _rel_drop(before: float, after: float) -> float:
    if before <= 0:
        return 0.0
    return float(min(1.0, max(0.0, (before - after) / before)))


def _run(X: np.ndarray, start_idx, r_max: int, rng=None, rho: float = 1.0):
    g = _Greedy(X, start_idx, rng, rho)
    a0 = g.amse()
    zero = ZERO_AMSE * g.scale
    added, hist, eps = [], [], []
    prev = a0
    for _ in range(r_max):
        if prev <= zero:
            break
        c = g.step()
        if c < 0:
            break
        cur = g.amse()
        added.append(c)
        hist.append(cur)
        eps.append(_rel_drop(prev, cur))
        prev = cur
    return a0, np.array(added, dtype=int), np.array(hist), np.array(eps)


def stopping_count(eps, eps0, rule: str = "first_crossing") -> int:
    """Number of additions kept under the stopping rule.

    ``first_crossing`` keeps the leading run of additions whose relative drop
    reaches the reference; ``literal_max`` keeps up to the last such addition.
    """
    eps = np.asarray(eps, dtype=float)
    if rule == "none":
        return int(eps.size)
    eps0 = np.asarray(eps0, dtype=float)
    if eps0.size < eps.size:
        raise ValueError("reference curve is shorter than the selection history")
    ok = eps >= eps0[: eps.size]
    if rule == "first_crossing":
        bad = np.flatnonzero(~ok)
        return int(bad[0]) if bad.size else int(eps.size)
    if rule == "literal_max":
        good = np.flatnonzero(ok)
        return int(good[-1] + 1) if good.size else 0
    raise ValueError(f"unknown stopping rule {rule!r}")


def default_r_max(grid_len: int) -> int:
    return max(0, min(grid_len - 2, 256))


def reference_curve(grid_len: int, r_max: int | None = None, M: int = 100, seed=None) -> ReferenceCurve:
    """Average relative drops of the greedy selector on ``M`` standard white-noise curves."""
    if M < 1:
        raise ValueError("M must be at least 1")
    if r_max is None:
        r_max = default_r_max(grid_len)
    r_max = min(int(r_max), max(grid_len - 2, 0))
    rng = np.random.default_rng(seed)
    total = np.zeros(r_max)
    for _ in range(M):
        noise = rng.standard_normal((1, grid_len))
        _, _, _, eps = _run(noise, [], r_max)
        total[: eps.size] += eps
    return ReferenceCurve(int(grid_len), int(M), total / M, None if seed is None else int(seed))


def cached_reference_curve(grid_len: int, r_max: int | None, M: int, seed: int, cache_dir=None) -> ReferenceCurve:
    """Reference curve stored as JSON in ``cache_dir`` (no caching when it is None)."""
    if r_max is None:
        r_max = default_r_max(grid_len)
    if cache_dir is None:
        return reference_curve(grid_len, r_max, M, seed)
    path = Path(cache_dir) / f"reference_G{grid_len}_r{r_max}_M{M}_s{seed}.json"
    if path.exists():
        return ReferenceCurve.from_dict(json.loads(path.read_text()))
    ref = reference_curve(grid_len, r_max, M, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".tmp{os.getpid()}")
    tmp.write_text(json.dumps(ref.to_dict()))
    os.replace(tmp, path)
    return ref


def select_knots(
    data: DiscreteCurveSet,
    start_knots=None,
    ref: ReferenceCurve | None = None,
    r_max: int | None = None,
    rule: str = "first_crossing",
    rho: float = 1.0,
    seed=None,
    M: int = 100,
) -> KnotSelection:
    """Greedy knot selection with the reference-curve stopping rule.

    Parameters
    ----------
    data : DiscreteCurveSet
        Curves on a common grid.
    start_knots : KnotVector, optional
        Initial knots (grid points); defaults to the two grid endpoints.
    ref : ReferenceCurve, optional
        Built from white noise with ``M`` replications when omitted and the
        rule needs it.
    r_max : int, optional
        Maximal number of additions, default ``min(G - 2, 256)``.
    rule : {'first_crossing', 'literal_max', 'none'}
        ``'none'`` keeps every addition, which turns ``r_max`` into an exact
        knot budget.
    rho : float
        Fraction of curves drawn at every step to rank candidates.
    """
    if rule not in STOP_RULES:
        raise ValueError(f"unknown stopping rule {rule!r}")
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    X = _matrix(data)
    args = data.args
    G = args.size
    start = KnotVector([args[0], args[-1]]) if start_knots is None else as_knots(start_knots)
    start_idx = _grid_indices(args, start)
    if r_max is None:
        r_max = default_r_max(G)
    r_max = int(min(r_max, G - 2 - start_idx.size))
    if rule != "none" and ref is None:
        ref = reference_curve(G, r_max, M, seed)
    rng = np.random.default_rng(seed)
    a0, idx, hist, eps = _run(X, start_idx, r_max, rng, rho)
    n_sel = stopping_count(eps, None if ref is None else ref.eps0, rule)
    knots = KnotVector(np.sort(np.r_[start.values, args[idx[:n_sel]]]))
    return KnotSelection(knots, start, args[idx], idx, a0, hist, eps, n_sel, rule)
