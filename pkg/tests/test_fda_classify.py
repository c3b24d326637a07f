"""Tests for class models, eigenspace classification, search and metrics."""

from __future__ import annotations

import json

import numpy as np
import numpy.testing as nptest
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splinet_fda.bases import build_basis
from splinet_fda.fda_classify import (
    ClassModel,
    DistanceTables,
    KLModelSpec,
    classify,
    coordinate_ascent,
    distance_table,
    eigen_decompose,
    evaluate,
    fit_class,
    fit_from_coefficients,
    path_argmax,
    project_to_eigenspace,
    relative_class_distances,
    sample_kl,
    search_counts,
    weights_from_sq,
)
from splinet_fda.projection import DataProjector, DiscreteCurveSet, project_data
from splinet_fda.spline_core import SplineFamily, lincomb
from strategies import seeds
from synthetic import KL_KNOTS, kl_recovery_error, kl_spec, quadrature_sq_distance, two_class_problem


@pytest.fixture(scope="module")
def kl_model():
    spec = kl_spec()
    data = sample_kl(spec, 300, seed=11)
    return fit_class(data, KL_KNOTS, k=3, label=4), data


class TestFit:
    def test_identical_curves(self):
        args = np.linspace(0, 1, 200)
        x = np.sin(3 * args)
        model = fit_class(DiscreteCurveSet.common(args, np.tile(x, (6, 1))), np.linspace(0, 1, 9))
        assert np.all(model.eigvals == 0)
        assert model.n_available == 0
        single = fit_class(DiscreteCurveSet.common(args, np.tile(x, (2, 1))), np.linspace(0, 1, 9))
        nptest.assert_allclose(model.mean_coef, single.mean_coef)
        ref = project_data(DiscreteCurveSet.common(args, x[None]), np.linspace(0, 1, 9)).coeff[0]
        nptest.assert_allclose(model.mean_coef, ref, atol=1e-12)

    def test_diagonal_covariance(self):
        b = build_basis(np.linspace(0, 1, 10), 3, "splinet")
        d = len(b)
        # four coefficient vectors with covariance diag(2, 1, 0, ...)
        a = np.zeros((4, d))
        a[:, 0] = np.sqrt(2) * np.array([1, -1, 1, -1])
        a[:, 1] = np.array([1, 1, -1, -1])
        model = fit_from_coefficients(a, b)
        nptest.assert_allclose(model.eigvals[:3], [2, 1, 0], atol=1e-12)
        nptest.assert_allclose(np.abs(model.eigvecs[:, 0]), np.eye(d)[0], atol=1e-12)
        nptest.assert_allclose(np.abs(model.eigvecs[:, 1]), np.eye(d)[1], atol=1e-12)
        assert model.n_available == 2

    def test_kl_recovery(self):
        errs = [kl_recovery_error(seed) for seed in range(20)]
        assert np.median(errs) < 0.2

    def test_needs_two_curves(self):
        args = np.linspace(0, 1, 20)
        with pytest.raises(ValueError, match="two curves"):
            fit_class(DiscreteCurveSet.common(args, np.zeros((1, 20))), np.linspace(0, 1, 6))

    def test_needs_orthonormal_basis(self):
        b = build_basis(np.linspace(0, 1, 8), 2, "bspline")
        with pytest.raises(ValueError, match="orthonormal"):
            fit_from_coefficients(np.zeros((3, len(b))), b)

    def test_trace_and_ordering(self, kl_model):
        model, data = kl_model
        c = DataProjector(model.basis, data.args).coefficients(data.values)
        centered = c - c.mean(axis=0)
        nptest.assert_allclose(model.eigvals.sum(), np.mean(np.sum(centered**2, axis=1)), rtol=1e-9)
        assert np.all(np.diff(model.eigvals) <= 0)
        assert np.all(model.eigvals >= 0)
        nptest.assert_allclose(model.eigvecs.T @ model.eigvecs, np.eye(model.dim), atol=1e-10)

    def test_sign_convention(self):
        w, V = eigen_decompose(np.diag([1.0, 3.0, 2.0]))
        nptest.assert_allclose(w, [3, 2, 1])
        for j in range(3):
            nz = V[:, j][np.abs(V[:, j]) > 1e-10]
            assert nz[0] > 0

    def test_serialization(self, kl_model):
        model, _ = kl_model
        back = ClassModel.from_dict(json.loads(json.dumps(model.with_count(2).to_dict())))
        assert back.label == 4 and back.n_retained == 2
        nptest.assert_array_equal(back.eigvecs, model.eigvecs)
        nptest.assert_array_equal(back.mean_coef, model.mean_coef)

    def test_count_bounds(self, kl_model):
        model, _ = kl_model
        with pytest.raises(ValueError, match="available"):
            model.with_count(model.n_available + 1)


class TestEigenspace:
    def test_full_dimension(self, kl_model):
        model, data = kl_model
        b = model.basis
        f = lincomb(b.family, np.random.default_rng(0).standard_normal((2, len(b))))
        fhat, resid = project_to_eigenspace(f, model, model.dim)
        assert np.all(resid < 1e-9)
        x = np.linspace(0, 1, 300)
        nptest.assert_allclose(fhat.evaluate(x), f.evaluate(x), atol=1e-9)

    def test_zero_count_gives_mean(self, kl_model):
        model, _ = kl_model
        f = SplineFamily([model.basis.family[0]])
        fhat, _ = project_to_eigenspace(f, model, 0)
        x = np.linspace(0, 1, 200)
        nptest.assert_allclose(fhat.evaluate(x)[0], model.mean(x), atol=1e-12)

    @given(st.integers(0, 3), seeds)
    def test_parseval(self, n, seed):
        spec = kl_spec()
        data = sample_kl(spec, 50, seed=seed)
        model = fit_class(data, KL_KNOTS, k=3)
        b = model.basis
        f = lincomb(b.family, np.random.default_rng(seed).standard_normal(len(b)))
        fhat, resid = project_to_eigenspace(f, model, n)
        delta = np.random.default_rng(seed).standard_normal(len(b)) - model.mean_coef
        coef_hat = model.mean_coef + (delta @ model.eigvecs[:, :n]) @ model.eigvecs[:, :n].T
        lhs = np.sum((coef_hat - model.mean_coef) ** 2)
        rhs = np.sum((delta @ model.eigvecs[:, :n]) ** 2)
        nptest.assert_allclose(lhs, rhs, atol=1e-10)
        nptest.assert_allclose(resid[0] ** 2, np.sum(delta**2) - rhs, atol=1e-9)

    def test_bad_count(self, kl_model):
        model, _ = kl_model
        with pytest.raises(ValueError):
            project_to_eigenspace(SplineFamily([model.basis.family[0]]), model, model.dim + 1)


class TestDistances:
    def test_decomposition_matches_direct(self, kl_model):
        model, data = kl_model
        rng = np.random.default_rng(5)
        args = data.args
        values = data.values[:20] + 0.3 * rng.standard_normal((20, args.size))
        tab = distance_table(model, args, values)
        assert tab.shape == (20, model.n_available + 1)
        assert np.all(np.diff(tab, axis=1) <= 1e-12)
        xx = DataProjector(model.basis, args).sq_norms(values)
        for n in range(model.n_available + 1):
            direct = quadrature_sq_distance(model, args, values, n)
            assert np.all(np.abs(tab[:, n] - direct) <= 1e-8 * xx)

    def test_own_mean_classified(self):
        specs = [kl_spec((0.5, 0.5), shift=s) for s in (0.0, 1.0, -1.0)]
        models = [fit_class(sample_kl(sp, 60, seed=i), KL_KNOTS, k=3, label=i) for i, sp in enumerate(specs)]
        grid = np.linspace(0, 1, 4001)
        for m in models:
            x = m.mean(grid)[None]
            out = classify((grid, x), models, [0, 0, 0])
            assert out.label == m.label

    def test_two_class_separation(self):
        models, test, labels = two_class_problem(seed=1)
        out = classify(test, models, [m.n_available for m in models])
        assert np.mean(out.labels == labels) >= 0.99
        own = relative_class_distances(models, test, labels)
        assert np.all(own < 0.5)

    def test_identical_classes_share_weight(self, kl_model):
        model, data = kl_model
        K = 4
        models = [ClassModel(i, *[getattr(model, f) for f in
                              ("mean_knots", "centered_knots", "basis", "mean_coef", "eigvals", "eigvecs")])
                  for i in range(K)]
        labels = np.arange(len(data)) % K
        nptest.assert_allclose(relative_class_distances(models, data, labels), 1 / K, atol=1e-12)

    def test_counts_validated(self, kl_model):
        model, data = kl_model
        with pytest.raises(ValueError, match="one eigenfunction count"):
            classify(data, [model], [0, 0])
        with pytest.raises(ValueError, match="available"):
            classify(data, [model], [model.n_available + 1])

    def test_tables_agree_with_classify(self):
        models, test, labels = two_class_problem(seed=2)
        tables = DistanceTables(models, test.args, test.values)
        for counts in ([0, 0], [1, 2], [3, 3]):
            a = tables.classify(counts)
            b = classify(test, models, counts)
            nptest.assert_array_equal(a.labels, b.labels)
            nptest.assert_allclose(a.weights, b.weights)


class TestWeights:
    @given(seeds, st.integers(2, 6))
    def test_properties(self, seed, K):
        rng = np.random.default_rng(seed)
        d2 = rng.uniform(0, 5, (7, K))
        w = weights_from_sq(d2)
        nptest.assert_allclose(w.sum(axis=1), 1.0)
        perm = rng.permutation(K)
        nptest.assert_allclose(weights_from_sq(d2[:, perm]), w[:, perm])
        nptest.assert_allclose(weights_from_sq(3.7 * d2), w)

    def test_all_zero(self):
        nptest.assert_allclose(weights_from_sq(np.zeros((1, 4))), 0.25)


class _Tables:
    """Minimal stand-in with a prescribed accuracy surface."""

    def __init__(self, upper, plateau):
        self.class_labels = np.array([0])
        self.upper = np.array([upper])
        self.plateau = plateau

    def classify(self, counts):
        n = int(counts[0])
        hits = min(n, self.plateau)
        labels = np.r_[np.zeros(hits, dtype=int), np.ones(self.plateau - hits, dtype=int)]

        class Out:
            pass

        out = Out()
        out.labels = labels
        out.weights = np.ones((labels.size, 1))
        return out


class TestSearch:
    def test_plateau_gives_smallest_count(self):
        res = search_counts(_Tables(upper=12, plateau=4), np.zeros(4, dtype=int), L=5, restarts=0)
        assert res.n_opt.tolist() == [4]
        assert res.accuracy == 1.0

    def test_patience(self):
        path = coordinate_ascent(lambda n: 0.0, [100], [0], L=3)
        assert len(path) == 4
        path = coordinate_ascent(lambda n: float(n[0] == 2), [100], [0], L=3)
        assert path_argmax(path)[0] == (2,)
        assert len(path) == 6

    def test_ties_go_to_lowest_index(self):
        path = coordinate_ascent(lambda n: float(n.sum()), [3, 3], [0, 0], L=1)
        assert path[1][0] == (1, 0)

    def test_upper_bound(self):
        path = coordinate_ascent(lambda n: float(n.sum()), [1, 2], [0, 0], L=5)
        assert path[-1][0] == (1, 2)

    def test_real_search(self):
        models, test, labels = two_class_problem(seed=3)
        res = search_counts(DistanceTables(models, test.args, test.values), labels, L=3, restarts=2, seed=0)
        assert res.accuracy >= 0.99
        assert res.n_opt.shape == (2,)
        assert np.all(res.s < 0.5)
        assert len(res.paths) == 3


class TestMetrics:
    def test_perfect(self):
        y = np.array([0, 1, 2, 2, 1, 0])
        rep = evaluate(y, y)
        nptest.assert_array_equal(rep.confusion, np.diag([2, 2, 2]))
        assert rep.accuracy == 1.0
        assert rep.macro_precision == rep.macro_recall == rep.macro_f1 == 1.0
        nptest.assert_allclose(rep.class_accuracy, 1.0)

    def test_two_class_example(self):
        rep = evaluate([1, 1, 0, 0], [1, 0, 1, 0])
        nptest.assert_allclose(rep.precision, 0.5)
        nptest.assert_allclose(rep.recall, 0.5)
        nptest.assert_allclose(rep.f1, 0.5)
        assert rep.accuracy == 0.5
        nptest.assert_allclose(rep.class_accuracy, 0.5)

    def test_confusion_orientation(self):
        rep = evaluate([1, 1, 1], [0, 0, 1], n_classes=2)
        nptest.assert_array_equal(rep.confusion, [[0, 0], [2, 1]])
        nptest.assert_allclose(rep.percent, [[0, 0], [100, 100]])

    @given(seeds, st.integers(2, 6))
    def test_identities(self, seed, K):
        rng = np.random.default_rng(seed)
        t = rng.integers(0, K, 80)
        p = np.where(rng.uniform(size=80) < 0.6, t, rng.integers(0, K, 80))
        rep = evaluate(p, t, K)
        assert rep.confusion.sum() == 80
        nptest.assert_allclose(rep.accuracy, np.mean(p == t))
        nptest.assert_allclose(rep.macro_f1, np.mean(rep.f1))
        ok = (rep.precision + rep.recall) > 0
        nptest.assert_allclose(rep.f1[ok], 2 * rep.precision[ok] * rep.recall[ok] / (rep.precision + rep.recall)[ok])
        nptest.assert_allclose(rep.percent.sum(axis=0)[rep.confusion.sum(axis=0) > 0], 100.0)

    def test_label_range(self):
        with pytest.raises(ValueError):
            evaluate([0, 3], [0, 1], n_classes=2)
        with pytest.raises(ValueError):
            evaluate([0], [0, 1])


class TestKLSampling:
    def test_zero_eigenvalues(self):
        spec = kl_spec((0.0, 0.0), shift=1.0)
        data = sample_kl(spec, 5, seed=0)
        nptest.assert_allclose(data.values, np.tile(spec.mean(data.args), (5, 1)))

    def test_negative_eigenvalue(self):
        spec = kl_spec((1.0,))
        with pytest.raises(ValueError, match="nonnegative"):
            KLModelSpec(spec.mean, np.array([-1.0]), spec.eigfuns)

    def test_moments(self):
        spec = kl_spec((4.0, 1.0))
        data = sample_kl(spec, 4000, seed=1)
        grid = data.args
        nptest.assert_allclose(data.values.mean(axis=0), spec.mean(grid), atol=5 * 2.2 / np.sqrt(4000) * 2)
        E = spec.eigfuns.evaluate(grid)
        var = 4.0 * E[0] ** 2 + 1.0 * E[1] ** 2
        emp = data.values.var(axis=0)
        big = var > 0.1 * var.max()
        nptest.assert_allclose(emp[big], var[big], rtol=0.15)

    def test_truncation(self):
        spec = kl_spec((1.0, 1.0, 1.0))
        t = KLModelSpec(spec.mean, spec.eigvals, spec.eigfuns, truncation=1)
        data = sample_kl(t, 20, seed=2, grid=np.linspace(0, 1, 101))
        E = spec.eigfuns.evaluate(data.args)
        resid = data.values - spec.mean(data.args)
        coef = np.linalg.lstsq(E.T, resid.T, rcond=None)[0]
        nptest.assert_allclose(coef[1:], 0.0, atol=1e-9)
