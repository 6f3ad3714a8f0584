"""Multi-scale sliding-window sampling and HOG descriptor extraction.

Windows tile each image without overlap except for a final row/column
anchored at ``dim - side`` when the image dimension is not a multiple of the
window side, so every pixel is covered at every applicable scale. All
windows are resampled to a common 48x48 grid before description, which makes
descriptors comparable across scales.
"""
from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from .core import CosegWarning, Image, Patch, Rect, resample_bilinear

__all__ = [
    "BLOCK_SIDE",
    "HOG_DIM",
    "sample_positions",
    "sample_patches",
    "normalize_patch",
    "hog_descriptor",
    "hog_descriptors",
]

BLOCK_SIDE = 48
HOG_DIM = 900

_CELL = 8           # pixels per cell side -> 6x6 cells on a 48x48 block
_BINS = 9           # unsigned orientation bins over [0, 180)
_BLOCK_CELLS = 2    # cells per descriptor block side, stride one cell
_NORM_EPS = 1e-6
_GRAY = np.array([0.299, 0.587, 0.114])


def sample_positions(length: int, side: int) -> list[int]:
    """Window origins along one axis: 0, side, 2*side, ... plus a final
    origin at ``length - side`` when the axis is not an exact multiple."""
    if side > length:
        raise ValueError(f"side {side} exceeds axis length {length}")
    pos = list(range(0, length - side + 1, side))
    if pos[-1] + side < length:
        pos.append(length - side)
    return pos


def sample_patches(image: Image, scales: Sequence[int], id_start: int = 0) -> list[Patch]:
    """Sample sliding windows at every scale that fits inside ``image``.

    Scales larger than an image dimension are skipped with a warning. Patch
    ids are assigned consecutively from ``id_start`` in scale-major,
    row-major order.
    """
    out: list[Patch] = []
    next_id = id_start
    for scale in scales:
        if scale > image.width or scale > image.height:
            warnings.warn(
                f"image {image.image_id!r}: scale {scale} exceeds dimensions "
                f"{image.width}x{image.height}, skipped",
                CosegWarning,
                stacklevel=2,
            )
            continue
        for y in sample_positions(image.height, scale):
            for x in sample_positions(image.width, scale):
                out.append(Patch(next_id, image.image_id, Rect(x, y, scale), scale))
                next_id += 1
    return out


def normalize_patch(image: Image, patch: Patch) -> np.ndarray:
    """Resample the patch window to a 48x48 RGB block (exact copy at scale 48)."""
    if not patch.rect.contains(image.width, image.height):
        raise ValueError(f"patch {patch.patch_id}: rect out of bounds")
    ys, xs = patch.rect.slices()
    return resample_bilinear(image.pixels[ys, xs], BLOCK_SIDE, BLOCK_SIDE)


def hog_descriptors(blocks: np.ndarray) -> np.ndarray:
    """HOG descriptors for a batch of 48x48 RGB blocks.

    Grayscale conversion, centered [-1, 0, 1] gradients with replicated
    borders, 9 unsigned orientation bins with bilinear voting between
    neighbouring bin centres, 8x8-pixel cells, 2x2-cell blocks at one-cell
    stride, per-block L2 normalization. Output is ``(N, 900)``.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim == 3:
        blocks = blocks[None]
    n, h, w = blocks.shape[0], blocks.shape[1], blocks.shape[2]
    if (h, w) != (BLOCK_SIDE, BLOCK_SIDE) or blocks.shape[3] != 3:
        raise ValueError(f"expected (N, 48, 48, 3) blocks, got {blocks.shape}")

    gray = blocks @ _GRAY
    gx = np.empty_like(gray)
    gx[:, :, 1:-1] = gray[:, :, 2:] - gray[:, :, :-2]
    gx[:, :, 0] = gray[:, :, 1] - gray[:, :, 0]
    gx[:, :, -1] = gray[:, :, -1] - gray[:, :, -2]
    gy = np.empty_like(gray)
    gy[:, 1:-1, :] = gray[:, 2:, :] - gray[:, :-2, :]
    gy[:, 0, :] = gray[:, 1, :] - gray[:, 0, :]
    gy[:, -1, :] = gray[:, -1, :] - gray[:, -2, :]

    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    t = ang / (180.0 / _BINS)
    b0 = np.floor(t).astype(np.int64) % _BINS
    frac = t - np.floor(t)
    b1 = (b0 + 1) % _BINS
    v0 = mag * (1.0 - frac)
    v1 = mag * frac

    cells = BLOCK_SIDE // _CELL
    hist = np.zeros((n, cells, cells, _BINS))
    for b in range(_BINS):
        votes = np.where(b0 == b, v0, 0.0) + np.where(b1 == b, v1, 0.0)
        hist[..., b] = votes.reshape(n, cells, _CELL, cells, _CELL).sum(axis=(2, 4))

    nblk = cells - _BLOCK_CELLS + 1
    out = np.empty((n, nblk * nblk * _BLOCK_CELLS * _BLOCK_CELLS * _BINS))
    width = _BLOCK_CELLS * _BLOCK_CELLS * _BINS
    k = 0
    for by in range(nblk):
        for bx in range(nblk):
            v = hist[:, by : by + _BLOCK_CELLS, bx : bx + _BLOCK_CELLS, :].reshape(n, width)
            norm = np.sqrt((v * v).sum(axis=1, keepdims=True) + _NORM_EPS**2)
            out[:, k : k + width] = v / norm
            k += width
    return out


def hog_descriptor(block: np.ndarray) -> np.ndarray:
    """Descriptor of a single 48x48 RGB block; see :func:`hog_descriptors`."""
    return hog_descriptors(np.asarray(block)[None])[0]
