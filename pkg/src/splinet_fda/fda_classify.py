"""Functional principal components per class and nearest-subspace classification.

Every class lives in the spline space over its own knots, represented by
coefficients in an orthonormal basis, so inner products of splines are dot
products of coefficient vectors.  A curve is assigned to the class whose
affine eigenspace (mean plus leading eigenfunctions) is closest.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .bases import BasisSet, build_basis
from .projection import DataProjector, DiscreteCurveSet, project_data, project_splines
from .spline_core import KnotVector, Spline, SplineFamily, as_knots, gauss_legendre, lincomb

EIG_CLAMP = 1e-12


# --------------------------------------------------------------------------
# class models


@dataclass(frozen=True, eq=False)
class ClassModel:
    """Mean and eigen-decomposition of one class, in coefficient form.

    ``mean_coef`` and the columns of ``eigvecs`` are coefficients in the
    orthonormal ``basis`` over ``centered_knots``.
    """

    label: int
    mean_knots: KnotVector
    centered_knots: KnotVector
    basis: BasisSet
    mean_coef: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    n_retained: int = 0
    n_train: int = 0

    @property
    def dim(self) -> int:
        return self.mean_coef.size

    @property
    def n_available(self) -> int:
        """Eigenfunctions with a positive eigenvalue."""
        return int(np.count_nonzero(self.eigvals > 0))

    @cached_property
    def mean(self) -> Spline:
        return lincomb(self.basis.family, self.mean_coef[None, :])[0]

    @cached_property
    def eigfuns(self) -> SplineFamily:
        return lincomb(self.basis.family, self.eigvecs.T)

    def with_count(self, n: int) -> "ClassModel":
        if not 0 <= n <= self.n_available:
            raise ValueError(f"class {self.label}: {n} eigenfunctions requested, {self.n_available} available")
        return replace(self, n_retained=int(n))

    def to_dict(self) -> dict:
        return {
            "label": int(self.label),
            "order": int(self.basis.order),
            "basis_type": self.basis.basis_type,
            "mean_knots": [float(v) for v in self.mean_knots.values],
            "centered_knots": [float(v) for v in self.centered_knots.values],
            "mean_coef": [float(v) for v in self.mean_coef],
            "eigvals": [float(v) for v in self.eigvals],
            "eigvecs": [[float(v) for v in row] for row in self.eigvecs],
            "n_retained": int(self.n_retained),
            "n_train": int(self.n_train),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassModel":
        knots = KnotVector(d["centered_knots"])
        basis = build_basis(knots, int(d["order"]), d.get("basis_type", "splinet"))
        return cls(
            int(d["label"]),
            KnotVector(d["mean_knots"]),
            knots,
            basis,
            np.array(d["mean_coef"], dtype=float),
            np.array(d["eigvals"], dtype=float),
            np.array(d["eigvecs"], dtype=float).reshape(len(d["mean_coef"]), -1),
            int(d.get("n_retained", 0)),
            int(d.get("n_train", 0)),
        )


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Make the first clearly nonzero entry of every column positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-10 * np.abs(col).max()) if col.size else []
        if len(big) and col[big[0]] < 0:
            V[:, j] = -col
    return V


def eigen_decompose(cov: np.ndarray, scale: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenvalues and sign-fixed eigenvectors.

    Eigenvalues at most ``EIG_CLAMP * scale`` are set to 0; ``scale``
    defaults to the largest eigenvalue.
    """
    w, V = np.linalg.eigh((cov + cov.T) / 2.0)
    w, V = w[::-1], V[:, ::-1]
    top = max(w[0], 0.0) if w.size else 0.0
    ref = top if scale is None else max(float(scale), 0.0)
    w = np.where(w > EIG_CLAMP * ref, w, 0.0) if top > 0 else np.zeros_like(w)
    return w, _fix_signs(V)


def fit_from_coefficients(coef, basis: BasisSet, mean_coef=None, label: int = 0, mean_knots=None) -> ClassModel:
    """Class model from coefficient vectors (rows) in an orthonormal ``basis``."""
    a = np.atleast_2d(np.asarray(coef, dtype=float))
    if a.shape[0] < 2:
        raise ValueError("need at least two curves per class")
    if not basis.orthonormal:
        raise ValueError("class models need an orthonormal basis")
    abar = a.mean(axis=0)
    centered = a - abar
    cov = centered.T @ centered / a.shape[0]
    # relative to the data size, so identical curves give exact zeros
    w, V = eigen_decompose(cov, np.mean(np.sum(a * a, axis=1)))
    mean_coef = abar if mean_coef is None else np.asarray(mean_coef, dtype=float)
    mk = basis.knots if mean_knots is None else as_knots(mean_knots)
    return ClassModel(int(label), mk, basis.knots, basis, mean_coef, w, V, 0, a.shape[0])


def fit_class(
    train: DiscreteCurveSet,
    mean_knots,
    centered_knots=None,
    k: int = 3,
    label: int = 0,
    basis_type: str = "splinet",
) -> ClassModel:
    """Mean and covariance structure of one class of discretized curves.

    The mean is the pointwise class average projected onto the spline space
    over ``mean_knots`` and then expressed in the space over
    ``centered_knots``.  Curves are projected onto the latter space and the
    covariance of their coefficients is diagonalized.
    """
    if len(train) < 2:
        raise ValueError("need at least two curves per class")
    mean_knots = as_knots(mean_knots)
    centered_knots = mean_knots if centered_knots is None else as_knots(centered_knots)
    basis = build_basis(centered_knots, k, basis_type)
    proj = DataProjector(basis, train.args)
    coef = proj.coefficients(train.values)
    mu = project_data(train.mean_curve(), mean_knots, k, basis_type).projected
    mean_coef = project_splines(mu, centered_knots, basis_type).coeff[0]
    return fit_from_coefficients(coef, basis, mean_coef, label, mean_knots)


def project_to_eigenspace(f, model: ClassModel, n: int | None = None):
    """Projection of splines onto the affine space of the first ``n`` eigenfunctions.

    Returns the projected splines and the residual norms.
    """
    n = model.n_retained if n is None else int(n)
    if not 0 <= n <= model.eigvecs.shape[1]:
        raise ValueError(f"{n} eigenfunctions requested, {model.eigvecs.shape[1]} available")
    c = project_splines(f, model.centered_knots, model.basis.basis_type).coeff
    Vn = model.eigvecs[:, :n]
    delta = c - model.mean_coef
    fhat = model.mean_coef + (delta @ Vn) @ Vn.T
    resid = np.linalg.norm(c - fhat, axis=1)
    return lincomb(model.basis.family, fhat), resid


# --------------------------------------------------------------------------
# distances and classification


def distance_table(model: ClassModel, args, values, projector: DataProjector | None = None) -> np.ndarray:
    """Squared distances of curves to the class for every eigenfunction count.

    Column ``n`` holds ``|x|^2 - |c|^2 + |c - mu|^2 - sum_{j<=n} <c - mu, v_j>^2``
    where ``c`` are the coefficients of the projection of ``x`` onto the class
    space.  Shape ``(curves, n_available + 1)``.
    """
    proj = projector if projector is not None else DataProjector(model.basis, args)
    v = np.atleast_2d(values)
    c = proj.coefficients(v)
    xx = proj.sq_norms(v)
    delta = c - model.mean_coef
    p = delta @ model.eigvecs[:, : model.n_available]
    base = xx - np.sum(c * c, axis=1) + np.sum(delta * delta, axis=1)
    out = base[:, None] - np.concatenate([np.zeros((c.shape[0], 1)), np.cumsum(p * p, axis=1)], axis=1)
    return np.maximum(out, 0.0)


def direct_sq_distance(model: ClassModel, args, values, n: int) -> np.ndarray:
    """Squared L2 distance between piecewise constant curves and their class projections.

    Evaluated without the coefficient shortcut: the projected spline is
    integrated against the step function piece by piece.
    """
    proj = DataProjector(model.basis, args)
    v = np.atleast_2d(values)
    c = proj.coefficients(v)
    Vn = model.eigvecs[:, :n]
    fhat = model.mean_coef + ((c - model.mean_coef) @ Vn) @ Vn.T
    fam = lincomb(model.basis.family, fhat)
    lo, hi = model.centered_knots.start, model.centered_knots.end
    t = np.clip(np.asarray(args, dtype=float), lo, hi)
    # split every data cell at the knots so the spline is a polynomial on each piece
    cuts = np.union1d(t, model.centered_knots.values)
    nodes, weights = gauss_legendre(2 * model.basis.order + 2)
    a, b = cuts[:-1], cuts[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    x = a[:, None] + (b - a)[:, None] * nodes[None, :]
    wq = (b - a)[:, None] * weights[None, :]
    cell = np.searchsorted(t, a, side="right") - 1
    S = fam.evaluate(x.ravel()).reshape(len(fam), *x.shape)
    step = v[:, cell]
    return np.sum((step[:, :, None] - S) ** 2 * wq[None], axis=(1, 2))


@dataclass(frozen=True, eq=False)
class ClassifierOutput:
    """Labels, residual norms per class and normalized squared distances."""

    labels: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray

    @property
    def label(self) -> int:
        return int(self.labels[0])


def weights_from_sq(d2: np.ndarray) -> np.ndarray:
    d2 = np.atleast_2d(d2)
    tot = d2.sum(axis=1, keepdims=True)
    K = d2.shape[1]
    safe = np.where(tot > 0, tot, 1.0)
    return np.where(tot > 0, d2 / safe, 1.0 / K)


def _decide(sq: np.ndarray, class_labels) -> ClassifierOutput:
    # argmin takes the first minimum, i.e. the lowest label after sorting
    idx = np.argmin(sq, axis=1)
    return ClassifierOutput(np.asarray(class_labels)[idx], np.sqrt(sq), weights_from_sq(sq))


def _sorted_models(models) -> list[ClassModel]:
    models = sorted(models, key=lambda m: m.label)
    if not models:
        raise ValueError("no class models given")
    return models


def classify(data, models: Sequence[ClassModel], counts=None) -> ClassifierOutput:
    """Nearest affine eigenspace classification of discretized curves.

    ``data`` is a DiscreteCurveSet on a common grid or an ``(args, values)``
    pair; ``counts`` defaults to each model's ``n_retained``.
    """
    models = _sorted_models(models)
    args, values = (data.args, data.values) if isinstance(data, DiscreteCurveSet) else data
    if counts is None:
        counts = [m.n_retained for m in models]
    if len(counts) != len(models):
        raise ValueError("one eigenfunction count per class is required")
    cols = []
    for m, n in zip(models, counts):
        if n > m.n_available:
            raise ValueError(f"class {m.label}: {n} eigenfunctions requested, {m.n_available} available")
        cols.append(distance_table(m, args, values)[:, n])
    return _decide(np.column_stack(cols), [m.label for m in models])


class DistanceTables:
    """Squared distances of a fixed set of curves to every class and count."""

    def __init__(self, models: Sequence[ClassModel], args, values):
        self.models = _sorted_models(models)
        self.class_labels = np.array([m.label for m in self.models])
        self.tables = [distance_table(m, args, values) for m in self.models]
        self.upper = np.array([t.shape[1] - 1 for t in self.tables])

    def sq(self, counts) -> np.ndarray:
        return np.column_stack([t[:, n] for t, n in zip(self.tables, counts)])

    def classify(self, counts) -> ClassifierOutput:
        return _decide(self.sq(counts), self.class_labels)


# --------------------------------------------------------------------------
# eigencount search


def rates(out: ClassifierOutput, targets, class_labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-class success rates (mean own-class weight) and accuracy rates."""
    targets = np.asarray(targets)
    s = np.zeros(len(class_labels))
    a = np.zeros(len(class_labels))
    for i, lab in enumerate(class_labels):
        mask = targets == lab
        if not np.any(mask):
            raise ValueError(f"class {lab} has no validation curves")
        s[i] = out.weights[mask, i].mean()
        a[i] = np.mean(out.labels[mask] == lab)
    return s, a


@dataclass(frozen=True, eq=False)
class SearchResult:
    n_opt: np.ndarray
    accuracy: float
    a: np.ndarray
    s: np.ndarray
    paths: list = field(default_factory=list)


def coordinate_ascent(score: Callable, upper, start, L: int = 5) -> list[tuple[tuple[int, ...], float]]:
    """Greedy unit steps on an integer vector maximizing ``score``.

    At every step the coordinate whose increment gives the largest score is
    increased (ties to the lowest index), even if the score drops.  The walk
    ends after ``L`` consecutive steps without a new best or when no
    coordinate can grow.  Returns the visited path with scores.
    """
    n = np.array(start, dtype=int)
    upper = np.asarray(upper, dtype=int)
    path = [(tuple(int(v) for v in n), float(score(n)))]
    best = path[0][1]
    misses = 0
    while misses < L:
        cands = np.flatnonzero(n < upper)
        if cands.size == 0:
            break
        vals = []
        for i in cands:
            trial = n.copy()
            trial[i] += 1
            vals.append(float(score(trial)))
        j = int(np.argmax(vals))
        n[cands[j]] += 1
        path.append((tuple(int(v) for v in n), vals[j]))
        if vals[j] > best:
            best, misses = vals[j], 0
        else:
            misses += 1
    return path


def path_argmax(path) -> tuple[tuple[int, ...], float]:
    scores = [v for _, v in path]
    i = int(np.argmax(scores))
    return path[i]


def search_counts(
    tables: DistanceTables, targets, L: int = 5, restarts: int = 3, seed=None, init_max: int = 10
) -> SearchResult:
    """Eigencounts maximizing mean per-class validation accuracy."""
    targets = np.asarray(targets)
    labels = tables.class_labels
    masks = [targets == lab for lab in labels]
    for lab, m in zip(labels, masks):
        if not np.any(m):
            raise ValueError(f"class {lab} has no validation curves")

    def abar(n):
        pred = tables.classify(n).labels
        return float(np.mean([np.mean(pred[m] == lab) for lab, m in zip(labels, masks)]))

    rng = np.random.default_rng(seed)
    starts = [np.zeros(len(labels), dtype=int)]
    for _ in range(restarts):
        starts.append(rng.integers(0, np.minimum(tables.upper, init_max) + 1))
    paths = []
    best_n, best_v = None, -np.inf
    for st in starts:
        path = coordinate_ascent(abar, tables.upper, st, L)
        paths.append(path)
        n, v = path_argmax(path)
        if v > best_v:
            best_n, best_v = n, v
    out = tables.classify(best_n)
    s, a = rates(out, targets, labels)
    return SearchResult(np.array(best_n), best_v, a, s, paths)


def search_eigen_counts(models, val: DiscreteCurveSet, val_labels, L: int = 5, restarts: int = 3, seed=None,
                        init_max: int = 10) -> SearchResult:
    return search_counts(DistanceTables(models, val.args, val.values), val_labels, L, restarts, seed, init_max)


def relative_class_distances(models, data: DiscreteCurveSet, labels, counts=None) -> np.ndarray:
    """Mean normalized squared distance of each class's curves to their own class.

    ``counts`` defaults to all available eigenfunctions, i.e. the distance to
    the whole class space.
    """
    models = _sorted_models(models)
    if counts is None:
        counts = [m.n_available for m in models]
    out = classify(data, models, counts)
    s, _ = rates(out, labels, [m.label for m in models])
    return s


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Confusion matrix (rows predicted, columns target) and derived scores."""

    confusion: np.ndarray
    accuracy: float
    class_accuracy: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def percent(self) -> np.ndarray:
        col = self.confusion.sum(axis=0, keepdims=True)
        return 100.0 * self.confusion / np.where(col > 0, col, 1)

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    @property
    def per_class_hit_rate(self) -> np.ndarray:
        """Diagonal of the percentage matrix, i.e. per-class recall in percent."""
        return np.diag(self.percent).copy()

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.astype(int).tolist(),
            "accuracy": float(self.accuracy),
            "class_accuracy": [float(v) for v in self.class_accuracy],
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
            "f1": [float(v) for v in self.f1],
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def evaluate(predictions, targets, n_classes: int | None = None) -> MetricsReport:
    """One-vs-rest scores per class with the confusion matrix."""
    p = np.asarray(predictions, dtype=int)
    t = np.asarray(targets, dtype=int)
    if p.shape != t.shape:
        raise ValueError("predictions and targets differ in length")
    K = int(max(p.max(initial=-1), t.max(initial=-1)) + 1) if n_classes is None else int(n_classes)
    if p.size and (p.min() < 0 or t.min() < 0 or p.max() >= K or t.max() >= K):
        raise ValueError(f"labels must lie in 0..{K - 1}")
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (p, t), 1)
    total = C.sum()
    tp = np.diag(C).astype(float)
    fp = C.sum(axis=1) - tp
    fn = C.sum(axis=0) - tp
    tn = total - tp - fp - fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return MetricsReport(
        C,
        float(tp.sum() / total) if total else 0.0,
        _ratio(tp + tn, total * np.ones(K)),
        precision,
        recall,
        f1,
    )


# --------------------------------------------------------------------------
# synthetic Karhunen-Loeve data


@dataclass(frozen=True, eq=False)
class KLModelSpec:
    """Mean spline plus independent components along orthonormal eigenfunctions."""

    mean: Spline
    eigvals: np.ndarray
    eigfuns: SplineFamily
    truncation: int | None = None

    def __post_init__(self):
        lam = np.asarray(self.eigvals, dtype=float)
        if np.any(lam < 0):
            raise ValueError("eigenvalues must be nonnegative")
        t = lam.size if self.truncation is None else int(self.truncation)
        if t > len(self.eigfuns) or t > lam.size:
            raise ValueError("truncation exceeds the number of eigenfunctions")
        object.__setattr__(self, "eigvals", lam)
        object.__setattr__(self, "truncation", t)


def sample_kl(spec: KLModelSpec, count: int, seed=None, grid=None) -> DiscreteCurveSet:
    """Draws of ``mu + sum_k sqrt(lambda_k) Z_k e_k`` on ``grid`` with standard normal ``Z``."""
    rng = np.random.default_rng(seed)
    if grid is None:
        kn = spec.mean.knots
        grid = np.linspace(kn.start, kn.end, 1025)
    grid = np.asarray(grid, dtype=float)
    t = spec.truncation
    Z = rng.standard_normal((count, t))
    E = spec.eigfuns.evaluate(grid)[:t]
    mu = spec.mean(grid)
    return DiscreteCurveSet.common(grid, mu[None, :] + (Z * np.sqrt(spec.eigvals[:t])) @ E)
