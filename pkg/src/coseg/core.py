"""Shared domain types, geometry and coverage bookkeeping.

Pixel rasters are numpy arrays throughout the package:

* an RGB image body is a float64 ``(H, W, 3)`` array with channels in [0, 1],
* a binary mask is a bool ``(H, W)`` array (True = foreground),
* a soft mask is a float64 ``(H, W)`` array with values in [0, 1].

The :class:`Image` wrapper carries an identifier next to the raster so that
patches can reference their source image.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

__all__ = [
    "CosegWarning",
    "DataError",
    "Image",
    "Rect",
    "Patch",
    "CosegConfig",
    "coverage_map",
    "resample_bilinear",
]


class CosegWarning(UserWarning):
    """Recoverable pipeline conditions (skipped scales, retained masks, ...)."""


class DataError(Exception):
    """Unusable input data (missing files, malformed rasters, bad layouts)."""


@dataclass(frozen=True)
class Image:
    """An RGB raster with an identifier.

    ``pixels`` is ``(H, W, 3)`` float64 with every channel in [0, 1].
    8-bit sources must be divided by 255 at ingestion time.
    """

    image_id: str
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image {self.image_id!r}: pixels must be (H, W, 3), got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError(f"image {self.image_id!r}: channel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Rect:
    """A square window given by its top-left corner and side length."""

    x: int
    y: int
    side: int

    def __post_init__(self):
        if self.side <= 0 or self.x < 0 or self.y < 0:
            raise ValueError(f"invalid rect {self}")

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.side), slice(self.x, self.x + self.side)

    def contains(self, width: int, height: int) -> bool:
        return self.x + self.side <= width and self.y + self.side <= height


@dataclass(frozen=True)
class Patch:
    """A window on one image at one sampling scale.

    ``patch_id`` is unique across the whole image set; ids are assigned
    densely in sampling order so they double as row indices into descriptor
    and label matrices.
    """

    patch_id: int
    image_id: str
    rect: Rect
    scale: int

    def __post_init__(self):
        if self.rect.side != self.scale:
            raise ValueError(f"patch {self.patch_id}: rect side {self.rect.side} != scale {self.scale}")


@dataclass(frozen=True)
class CosegConfig:
    """Hyperparameters of the co-segmentation pipeline.

    ``alpha`` weighs the cross-image shape-transfer term, ``lam`` the
    coupling between soft and discrete labels. Both defaults follow the
    reference setting (1 and 0.3); window sides default to the four
    sliding-window scales 48..120.
    """

    alpha: float = 1.0
    lam: float = 0.3
    scales: tuple[int, ...] = (48, 72, 96, 120)
    gmm_components: int = 12
    outer_iterations: int = 10
    diffusion_tol: float = 1e-3
    diffusion_max_sweeps: int = 50
    joint_color_models: bool = True
    transfer_enabled: bool = True
    saliency_source: str = "builtin"  # "builtin" | "external"
    use_saliency_cut: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))

    def validate(self) -> None:
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not self.scales:
            raise ValueError("scales must be nonempty")
        if any(s < 48 for s in self.scales):
            raise ValueError("every scale must be >= 48")
        for name in ("gmm_components", "outer_iterations", "diffusion_max_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.diffusion_tol > 0:
            raise ValueError("diffusion_tol must be > 0")
        if self.saliency_source not in ("builtin", "external"):
            raise ValueError("saliency_source must be 'builtin' or 'external'")

    def replace(self, **kw) -> "CosegConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d


def coverage_map(patches: Sequence[Patch], image: Image) -> np.ndarray:
    """Count, per pixel, how many of the given patches cover it.

    All patches must belong to ``image`` and lie inside its bounds.
    Returns an int64 ``(H, W)`` array.
    """
    cover = np.zeros((image.height, image.width), dtype=np.int64)
    for p in patches:
        if p.image_id != image.image_id:
            raise ValueError(f"patch {p.patch_id} belongs to image {p.image_id!r}, not {image.image_id!r}")
        if not p.rect.contains(image.width, image.height):
            raise ValueError(f"patch {p.patch_id}: rect out of bounds")
        ys, xs = p.rect.slices()
        cover[ys, xs] += 1
    return cover


def resample_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-centre coordinates.

    Accepts 2D fields or (H, W, C) rasters. When the output size equals the
    input size the source is returned as an exact copy, so same-scale windows
    stay byte-identical through the pipeline.
    """
    src = np.asarray(src, dtype=np.float64)
    in_h, in_w = src.shape[0], src.shape[1]
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    if (in_h, in_w) == (out_h, out_w):
        return src.copy()

    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if src.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]

    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    top = a + (b - a) * wx
    bot = c + (d - c) * wx
    return top + (bot - top) * wy
