"""Tests for image padding, flattening and file readers."""

from __future__ import annotations

import gzip
import struct

import numpy as np
import numpy.testing as nptest
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import hilbert_recursive
from splinet_fda.imaging import (
    DataFormatError,
    flatten,
    gradient_image,
    hilbert_d2xy,
    hilbert_flatten,
    hilbert_xy2d,
    images_to_curves,
    load_images,
    pad_to_pow2,
    read_csv_images,
    read_idx_images,
    read_idx_labels,
    write_idx,
)


class TestPadding:
    def test_fashion_size(self):
        img = np.ones((28, 28))
        out = pad_to_pow2(img)
        assert out.shape == (32, 32)
        assert out[2:30, 2:30].all()
        assert out.sum() == 28 * 28
        assert not out[:2].any() and not out[-2:].any()
        assert not out[:, :2].any() and not out[:, -2:].any()

    def test_power_of_two_unchanged(self):
        img = np.arange(32 * 32).reshape(32, 32)
        nptest.assert_array_equal(pad_to_pow2(img), img)

    def test_single_pixel(self):
        assert pad_to_pow2(np.array([[7]])).shape == (1, 1)

    def test_stack_and_rectangle(self):
        out = pad_to_pow2(np.ones((3, 5, 3)))
        assert out.shape == (3, 8, 8)
        assert out[0].sum() == 15


class TestHilbert:
    def test_order_one(self):
        x, y = hilbert_d2xy(1, np.arange(4))
        assert list(zip(x.tolist(), y.tolist())) == [(0, 0), (0, 1), (1, 1), (1, 0)]

    @pytest.mark.parametrize("m", range(7))
    def test_matches_recursive_construction(self, m):
        x, y = hilbert_d2xy(m, np.arange(4**m))
        assert list(zip(x.tolist(), y.tolist())) == hilbert_recursive(m)

    @pytest.mark.parametrize("m", range(1, 7))
    def test_bijection_and_adjacency(self, m):
        n = 1 << m
        x, y = hilbert_d2xy(m, np.arange(n * n))
        assert len(set(zip(x.tolist(), y.tolist()))) == n * n
        steps = np.abs(np.diff(x)) + np.abs(np.diff(y))
        assert np.all(steps == 1)
        nptest.assert_array_equal(hilbert_xy2d(m, x, y), np.arange(n * n))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            hilbert_d2xy(2, 16)
        with pytest.raises(ValueError):
            hilbert_xy2d(2, 4, 0)

    def test_constant_image(self):
        nptest.assert_array_equal(hilbert_flatten(np.full((8, 8), 3)), np.full(64, 3))

    def test_non_square(self):
        with pytest.raises(ValueError, match="square"):
            hilbert_flatten(np.zeros((4, 8)))

    @given(st.integers(0, 4), st.integers(0, 2**31 - 1))
    def test_flattenings_are_permutations(self, m, seed):
        n = 1 << m
        img = np.random.default_rng(seed).integers(0, 255, (n, n))
        for method in ("hilbert", "row", "column"):
            nptest.assert_array_equal(np.sort(flatten(img, method)), np.sort(img.ravel()))

    def test_row_and_column(self):
        img = np.array([[1, 2], [3, 4]])
        nptest.assert_array_equal(flatten(img, "row"), [1, 2, 3, 4])
        nptest.assert_array_equal(flatten(img, "column"), [1, 3, 2, 4])
        with pytest.raises(ValueError):
            flatten(img, "spiral")


class TestGradient:
    def test_constant(self):
        assert not gradient_image(np.full((6, 6), 5.0)).any()

    def test_linear_in_rows(self):
        I = np.repeat(np.arange(6.0)[:, None], 6, axis=1)
        nptest.assert_allclose(gradient_image(I)[1:-1, 1:-1], 1.0)

    def test_diagonal_ramp(self):
        i, j = np.indices((7, 7))
        nptest.assert_allclose(gradient_image(i + j)[1:-1, 1:-1], np.sqrt(2))

    @given(st.integers(0, 2**31 - 1))
    def test_transpose_symmetry(self, seed):
        I = np.random.default_rng(seed).standard_normal((9, 9))
        nptest.assert_allclose(gradient_image(I.T), gradient_image(I).T)


class TestReaders:
    def test_idx_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, (5, 28, 28), dtype=np.uint8)
        labels = np.array([0, 3, 9, 1, 1], dtype=np.uint8)
        write_idx(tmp_path / "i.gz", tmp_path / "l.gz", imgs, labels)
        nptest.assert_array_equal(read_idx_images(tmp_path / "i.gz"), imgs)
        nptest.assert_array_equal(read_idx_labels(tmp_path / "l.gz"), labels)
        write_idx(tmp_path / "i.raw", tmp_path / "l.raw", imgs, labels)
        a, b = load_images(tmp_path / "i.raw", tmp_path / "l.raw")
        nptest.assert_array_equal(a, imgs)
        nptest.assert_array_equal(b, labels)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(struct.pack(">IIII", 0x0802, 1, 2, 2) + bytes(4))
        with pytest.raises(DataFormatError, match="magic"):
            read_idx_images(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.gz"
        with gzip.open(path, "wb") as fh:
            fh.write(struct.pack(">IIII", 0x0803, 2, 2, 2) + bytes(5))
        with pytest.raises(DataFormatError, match="expected"):
            read_idx_images(path)

    def test_count_mismatch(self, tmp_path):
        write_idx(tmp_path / "i", tmp_path / "l", np.zeros((3, 2, 2)), np.zeros(2))
        with pytest.raises(DataFormatError, match="labels"):
            load_images(tmp_path / "i", tmp_path / "l")

    def test_csv(self, tmp_path):
        rng = np.random.default_rng(1)
        rows = np.c_[[4, 0, 7], rng.integers(0, 256, (3, 784))]
        header = "label," + ",".join(f"pixel{i}" for i in range(1, 785))
        path = tmp_path / "f.csv"
        path.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")
        imgs, labels = read_csv_images(path)
        assert imgs.shape == (3, 28, 28)
        nptest.assert_array_equal(labels, [4, 0, 7])
        nptest.assert_array_equal(imgs.reshape(3, -1), rows[:, 1:])
        args, values = images_to_curves(imgs)
        assert values.shape == (3, 1024)

    def test_csv_wrong_width(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("1,2,3\n")
        with pytest.raises(DataFormatError):
            read_csv_images(path)


def test_images_to_curves():
    imgs = np.full((2, 28, 28), 255, dtype=np.uint8)
    args, values = images_to_curves(imgs)
    assert values.shape == (2, 1024)
    nptest.assert_allclose(args, np.linspace(0, 1, 1024))
    assert values.max() == 1.0
    assert values.sum(axis=1).tolist() == [784.0, 784.0]
    _, raw = images_to_curves(imgs, "row", normalize=False)
    assert raw.max() == 255.0
