"""Turning grayscale images into discretized curves.

Images are padded to a power-of-two square and read along a Hilbert curve,
row by row, or column by column.  Readers for the IDX and CSV layouts of
Fashion-MNIST are included.
"""

from __future__ import annotations

import gzip
import struct
from functools import lru_cache
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
FLATTENINGS = ("hilbert", "row", "column")


class DataFormatError(ValueError):
    """Malformed image or label file."""


def pad_to_pow2(img) -> np.ndarray:
    """Zero-pad to the smallest ``2**m`` square holding ``img``, content centered.

    An odd excess puts the extra pixel at the bottom/right.  Works on a single
    image or a stack of images (padding the last two axes).
    """
    img = np.asarray(img)
    h, w = img.shape[-2:]
    side = 1 << max(0, int(np.ceil(np.log2(max(h, w, 1)))))
    top, left = (side - h) // 2, (side - w) // 2
    pad = [(0, 0)] * (img.ndim - 2) + [(top, side - h - top), (left, side - w - left)]
    return np.pad(img, pad)


def _order(side: int) -> int:
    m = side.bit_length() - 1
    if side < 1 or (1 << m) != side:
        raise ValueError(f"side {side} is not a power of two")
    return m


def hilbert_d2xy(m: int, d):
    """Row and column of position ``d`` along the order-``m`` Hilbert curve."""
    d = np.asarray(d, dtype=np.int64)
    n = 1 << m
    if np.any((d < 0) | (d >= n * n)):
        raise ValueError("position outside the curve")
    x = np.zeros_like(d)
    y = np.zeros_like(d)
    t = d.copy()
    s = 1
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        flip = (ry == 0) & (rx == 1)
        x = np.where(flip, s - 1 - x, x)
        y = np.where(flip, s - 1 - y, y)
        swap = ry == 0
        x, y = np.where(swap, y, x), np.where(swap, x, y)
        x = x + s * rx
        y = y + s * ry
        t = t // 4
        s *= 2
    return x, y


def hilbert_xy2d(m: int, x, y):
    """Position along the order-``m`` Hilbert curve of pixel ``(x, y)``."""
    x = np.array(x, dtype=np.int64)
    y = np.array(y, dtype=np.int64)
    n = 1 << m
    if np.any((x < 0) | (x >= n) | (y < 0) | (y >= n)):
        raise ValueError("pixel outside the grid")
    d = np.zeros(np.broadcast(x, y).shape, dtype=np.int64)
    s = n // 2
    while s > 0:
        rx = ((x & s) > 0).astype(np.int64)
        ry = ((y & s) > 0).astype(np.int64)
        d += s * s * ((3 * rx) ^ ry)
        flip = (ry == 0) & (rx == 1)
        x = np.where(flip, s - 1 - x, x)
        y = np.where(flip, s - 1 - y, y)
        swap = ry == 0
        x, y = np.where(swap, y, x), np.where(swap, x, y)
        s //= 2
    return d


@lru_cache(maxsize=16)
def hilbert_order_indices(m: int) -> np.ndarray:
    """Flat row-major pixel index visited at each curve position."""
    x, y = hilbert_d2xy(m, np.arange(4**m))
    return x * (1 << m) + y


def hilbert_flatten(img) -> np.ndarray:
    """Values along the Hilbert curve; accepts one image or a stack."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    if h != w:
        raise ValueError("Hilbert flattening needs a square image")
    m = _order(h)
    flat = img.reshape(img.shape[:-2] + (h * w,))
    return flat[..., hilbert_order_indices(m)]


def flatten_by_row(img) -> np.ndarray:
    img = np.asarray(img)
    return img.reshape(img.shape[:-2] + (-1,))


def flatten_by_column(img) -> np.ndarray:
    img = np.asarray(img)
    return np.swapaxes(img, -1, -2).reshape(img.shape[:-2] + (-1,))


def flatten(img, method: str = "hilbert") -> np.ndarray:
    if method == "hilbert":
        return hilbert_flatten(img)
    if method == "row":
        return flatten_by_row(img)
    if method == "column":
        return flatten_by_column(img)
    raise ValueError(f"unknown flattening {method!r}")


def curve_grid(length: int) -> np.ndarray:
    """Arguments ``d / (length - 1)`` attached to a flattened image."""
    return np.linspace(0.0, 1.0, length)


def gradient_image(img) -> np.ndarray:
    """Gradient magnitude with central differences inside, one-sided at the border."""
    I = np.asarray(img, dtype=float)
    dx = np.zeros_like(I)
    dy = np.zeros_like(I)
    if I.shape[-2] > 1:
        dx[..., 1:-1, :] = (I[..., 2:, :] - I[..., :-2, :]) / 2.0
        dx[..., 0, :] = I[..., 1, :] - I[..., 0, :]
        dx[..., -1, :] = I[..., -1, :] - I[..., -2, :]
    if I.shape[-1] > 1:
        dy[..., :, 1:-1] = (I[..., :, 2:] - I[..., :, :-2]) / 2.0
        dy[..., :, 0] = I[..., :, 1] - I[..., :, 0]
        dy[..., :, -1] = I[..., :, -1] - I[..., :, -2]
    return np.hypot(dx, dy)


# --------------------------------------------------------------------------
# file readers


def _open(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise DataFormatError(f"{path}: bad image magic number {magic:#010x}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if body.size != n * rows * cols:
        raise DataFormatError(f"{path}: expected {n * rows * cols} pixels, found {body.size}")
    return body.reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise DataFormatError(f"{path}: bad label magic number {magic:#010x}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if body.size != n:
        raise DataFormatError(f"{path}: expected {n} labels, found {body.size}")
    return body.copy()


def write_idx(images_path, labels_path, images, labels) -> None:
    """Write gzip-compressed IDX files (suffix ``.gz``) or raw ones otherwise."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    for path, header, body in (
        (images_path, struct.pack(">IIII", IMAGE_MAGIC, *images.shape), images.tobytes()),
        (labels_path, struct.pack(">II", LABEL_MAGIC, labels.size), labels.tobytes()),
    ):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as fh:
            fh.write(header + body)


def read_csv_images(path, side: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``label, pixel_1, ..., pixel_{side*side}``; a non-numeric header row is skipped."""
    with _open(path) as fh:
        text = fh.read().decode()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and not lines[0].split(",")[0].strip().lstrip("-").isdigit():
        lines = lines[1:]
    try:
        arr = np.array([[float(v) for v in ln.split(",")] for ln in lines])
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric entry") from exc
    if arr.ndim != 2 or arr.shape[1] != side * side + 1:
        raise DataFormatError(f"{path}: expected {side * side + 1} columns per row")
    return arr[:, 1:].reshape(-1, side, side), arr[:, 0].astype(int)


def load_images(images_path, labels_path=None) -> tuple[np.ndarray, np.ndarray]:
    """Images and labels from an IDX pair or a single CSV file."""
    if labels_path is None:
        return read_csv_images(images_path)
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.size:
        raise DataFormatError(f"{images.shape[0]} images but {labels.size} labels")
    return images, labels


def images_to_curves(images, method: str = "hilbert", normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Pad, flatten and optionally scale to [0, 1]; returns ``(args, values)``."""
    values = flatten(pad_to_pow2(images), method).astype(float)
    if normalize:
        values = values / 255.0
    values = values.reshape(-1, values.shape[-1])
    return curve_grid(values.shape[-1]), values
