"""Hypothesis strategies shared by the test modules."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from splinet_fda.bases import build_bsplines
from splinet_fda.spline_core import KnotVector, lincomb


@st.composite
def knot_vectors(draw, n_min: int = 1, n_max: int = 12, start: float = 0.0, end: float = 1.0):
    """Knots on ``[start, end]`` with gaps bounded away from zero."""
    n = draw(st.integers(n_min, n_max))
    gaps = np.array(draw(st.lists(st.floats(0.25, 1.0), min_size=n + 1, max_size=n + 1)))
    xi = start + (end - start) * np.r_[0.0, np.cumsum(gaps)] / gaps.sum()
    xi[-1] = end
    return KnotVector(xi)


@st.composite
def splines(draw, k=None, n_min: int = 3, n_max: int = 10):
    """A random spline of order ``k`` as a combination of B-splines."""
    if k is None:
        k = draw(st.integers(0, 3))
    knots = draw(knot_vectors(max(n_min, k), n_max))
    b = build_bsplines(knots, k)
    seed = draw(st.integers(0, 2**31 - 1))
    c = np.random.default_rng(seed).standard_normal(len(b))
    return lincomb(b.family, c)[0]


seeds = st.integers(0, 2**31 - 1)
