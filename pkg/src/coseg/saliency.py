"""Boundary-prior saliency and the coarse foreground initialization.

Saliency is estimated with a raster-scan minimum barrier distance transform:
every border pixel is a seed, the cost of a path is the largest per-channel
range (max minus min) of the pixel values along it, and alternating sweeps
relax an upper bound on that cost. Pixels that are hard to reach from the
border without crossing an appearance barrier come out salient.

Each sweep processes rows in one vertical direction but relaxes the row in
both column orders from the same incoming state and keeps the better
candidate per pixel, which makes the transform exactly symmetric under
horizontal mirroring.
"""
from __future__ import annotations

import numba
import numpy as np

from .core import CosegConfig, Image

__all__ = [
    "mbd_saliency",
    "normalize_map",
    "threshold_saliency",
    "saliency_cut",
]


@numba.njit(cache=True)
def _relax_pass(img, U, L, D, top_down):
    """One sweep: both column orders relaxed from the same state, merged."""
    H, W, C = img.shape
    Ua = U.copy(); La = L.copy(); Da = D.copy()
    Ub = U.copy(); Lb = L.copy(); Db = D.copy()
    dy = -1 if top_down else 1
    y = 0 if top_down else H - 1
    for _ in range(H):
        # left-to-right, neighbours (left, vertical)
        for x in range(W):
            for k in range(2):
                ny = y + dy if k == 1 else y
                nx = x - 1 if k == 0 else x
                if ny < 0 or ny >= H or nx < 0 or nx >= W:
                    continue
                if Da[ny, nx] == np.inf:
                    continue
                d = 0.0
                for c in range(C):
                    hi = max(Ua[ny, nx, c], img[y, x, c])
                    lo = min(La[ny, nx, c], img[y, x, c])
                    if hi - lo > d:
                        d = hi - lo
                if d < Da[y, x]:
                    Da[y, x] = d
                    for c in range(C):
                        Ua[y, x, c] = max(Ua[ny, nx, c], img[y, x, c])
                        La[y, x, c] = min(La[ny, nx, c], img[y, x, c])
        # right-to-left, neighbours (right, vertical)
        for x in range(W - 1, -1, -1):
            for k in range(2):
                ny = y + dy if k == 1 else y
                nx = x + 1 if k == 0 else x
                if ny < 0 or ny >= H or nx < 0 or nx >= W:
                    continue
                if Db[ny, nx] == np.inf:
                    continue
                d = 0.0
                for c in range(C):
                    hi = max(Ub[ny, nx, c], img[y, x, c])
                    lo = min(Lb[ny, nx, c], img[y, x, c])
                    if hi - lo > d:
                        d = hi - lo
                if d < Db[y, x]:
                    Db[y, x] = d
                    for c in range(C):
                        Ub[y, x, c] = max(Ub[ny, nx, c], img[y, x, c])
                        Lb[y, x, c] = min(Lb[ny, nx, c], img[y, x, c])
        y += -dy

    # keep the better candidate; ties resolved by the lexicographically
    # smaller (U, L) state so the merge stays mirror-symmetric
    for y in range(H):
        for x in range(W):
            take_b = False
            if Db[y, x] < Da[y, x]:
                take_b = True
            elif Db[y, x] == Da[y, x]:
                for c in range(C):
                    if Ub[y, x, c] != Ua[y, x, c]:
                        take_b = Ub[y, x, c] < Ua[y, x, c]
                        break
                    if Lb[y, x, c] != La[y, x, c]:
                        take_b = Lb[y, x, c] < La[y, x, c]
                        break
            if take_b:
                D[y, x] = Db[y, x]
                for c in range(C):
                    U[y, x, c] = Ub[y, x, c]
                    L[y, x, c] = Lb[y, x, c]
            else:
                D[y, x] = Da[y, x]
                for c in range(C):
                    U[y, x, c] = Ua[y, x, c]
                    L[y, x, c] = La[y, x, c]


def mbd_saliency(image: Image, passes: int = 4) -> np.ndarray:
    """Minimum-barrier saliency map of ``image``, min-max normalized to [0, 1].

    ``passes`` alternating sweeps (downward, upward, ...) relax the barrier
    distance from the image-border seed set; more passes can only tighten the
    estimate. Requires ``passes >= 2`` so both vertical directions run.
    """
    if passes < 2:
        raise ValueError("passes must be >= 2")
    img = np.ascontiguousarray(image.pixels)
    H, W = img.shape[:2]
    U = img.copy()
    L = img.copy()
    D = np.full((H, W), np.inf)
    D[0, :] = 0.0
    D[-1, :] = 0.0
    D[:, 0] = 0.0
    D[:, -1] = 0.0
    for p in range(passes):
        _relax_pass(img, U, L, D, p % 2 == 0)
    return normalize_map(D)


def normalize_map(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant map becomes all zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi > lo:
        return (values - lo) / (hi - lo)
    return np.zeros_like(values)


def _central_rect_mask(height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    y0, x0 = height // 4, width // 4
    mask[y0 : y0 + max(1, height // 2), x0 : x0 + max(1, width // 2)] = True
    return mask


def threshold_saliency(sal_map: np.ndarray, factor: float = 2.0) -> np.ndarray:
    """Threshold a saliency map into a non-degenerate foreground mask.

    Foreground is ``value >= factor * mean``. If that leaves the mask empty
    or full, retry at half the map maximum; if still degenerate, fall back to
    the central quarter-area rectangle. The result is never all-background
    and never all-foreground.
    """
    if not factor > 0:
        raise ValueError("factor must be > 0")
    sal_map = np.asarray(sal_map, dtype=np.float64)
    for tau in (factor * sal_map.mean(), 0.5 * sal_map.max()):
        mask = sal_map >= tau
        if mask.any() and not mask.all():
            return mask
    return _central_rect_mask(*sal_map.shape)


def saliency_cut(image: Image, sal_map: np.ndarray, config: CosegConfig) -> np.ndarray:
    """Refine a thresholded saliency seed with one color-model graph cut.

    Fits foreground/background color mixtures on the seed split, then runs a
    single cut with no shape-transfer term. Falls back to the seed itself if
    the cut degenerates, so the result is always non-empty.
    """
    from . import mrf  # late import: mrf pulls in scipy.sparse

    if sal_map.shape != (image.height, image.width):
        raise ValueError("saliency map does not match image dimensions")
    seed = threshold_saliency(sal_map)
    pixels = image.pixels.reshape(-1, 3)
    flat = seed.ravel()
    fg = mrf.fit_gmm(pixels[flat], config.gmm_components, seed=config.seed)
    bg = mrf.fit_gmm(pixels[~flat], config.gmm_components, seed=config.seed + 1)
    unary = mrf.unary_costs(image.pixels, fg, bg)
    pairwise = mrf.pairwise_costs(image.pixels)
    mask = mrf.graph_cut(unary, pairwise)
    if not mask.any() or mask.all():
        return seed
    return mask
