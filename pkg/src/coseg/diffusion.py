"""Label diffusion: the soft-label subproblem of the alternating solver.

With discrete labels fixed, the soft labels minimize a strictly convex
quadratic: the reconstruction residual of each patch label under its learned
neighbourhood weights plus a coupling to the discrete labels. A sweep visits
patches in id order and applies the closed-form single-patch update

    z_i <- [ alpha * ( sum_{j in N_i} w_ij z_j
                     + sum_{j : i in N_j} w_ji (z_j - sum_{k in N_j, k != i} w_jk z_k) )
             + lam * y_i ]
           / ( alpha + lam + alpha * sum_{j : i in N_j} w_ji^2 ),

which is exact coordinate minimization, so the objective never increases
and the sweeps converge to the unique minimizer. Patch labels live on the
same 48x48 grid as the descriptors (2304 values per patch).
"""
from __future__ import annotations

from typing import Sequence

import numba
import numpy as np

from .core import CosegConfig, Image, Patch, coverage_map, resample_bilinear
from .lle import WeightedPatchGraph
from .patches import BLOCK_SIDE

__all__ = [
    "LABEL_LEN",
    "extract_patch_labels",
    "diffusion_sweep",
    "transfer_objective",
    "run_diffusion",
    "backproject",
]

LABEL_LEN = BLOCK_SIDE * BLOCK_SIDE


def extract_patch_labels(field: np.ndarray, patch: Patch) -> np.ndarray:
    """Resample a pixel label field over the patch window to the 48x48 grid.

    Accepts binary or soft fields; returns a flat vector of 2304 values in
    [0, 1] (row-major). Same-scale windows are copied exactly.
    """
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape
    if not patch.rect.contains(w, h):
        raise ValueError(f"patch {patch.patch_id}: rect out of bounds")
    ys, xs = patch.rect.slices()
    return resample_bilinear(field[ys, xs], BLOCK_SIDE, BLOCK_SIDE).ravel()


@numba.njit(cache=True)
def _gs_sweep(Z, Y, R, in_ptr, in_idx, in_w, has_out, in_sq, alpha, lam):
    """Sequential per-patch updates with incrementally maintained residuals.

    ``R`` holds ``z_i - sum_j w_ij z_j`` per patch (zero rows for patches
    without neighbours) and is kept consistent as labels change.
    """
    P, d = Z.shape
    acc = np.empty(d)
    delta = np.empty(d)
    for i in range(P):
        den = alpha * has_out[i] + lam + alpha * in_sq[i]
        k0, k1 = in_ptr[i], in_ptr[i + 1]
        for c in range(d):
            acc[c] = in_sq[i] * Z[i, c]
        for k in range(k0, k1):
            j = in_idx[k]
            wji = in_w[k]
            for c in range(d):
                acc[c] += wji * R[j, c]
        for c in range(d):
            num = alpha * (has_out[i] * (Z[i, c] - R[i, c]) + acc[c]) + lam * Y[i, c]
            zn = num / den
            delta[c] = zn - Z[i, c]
            Z[i, c] = zn
            if has_out[i] != 0.0:
                R[i, c] += delta[c]
        for k in range(k0, k1):
            j = in_idx[k]
            wji = in_w[k]
            for c in range(d):
                R[j, c] -= wji * delta[c]


def _residuals(Z: np.ndarray, graph: WeightedPatchGraph) -> np.ndarray:
    R = np.zeros_like(Z)
    for i in range(graph.n_patches):
        ids, w = graph.row(i)
        if ids.size:
            R[i] = Z[i] - w @ Z[ids]
    return R


def diffusion_sweep(Z: np.ndarray, Y: np.ndarray, graph: WeightedPatchGraph, alpha: float, lam: float) -> np.ndarray:
    """One full sweep of per-patch updates in ascending patch-id order.

    Returns a new label matrix; the inputs are not modified. Patches with
    neither outgoing nor incoming edges are reset to their discrete labels.
    """
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Z.ndim != 2 or Z.shape != Y.shape or Z.shape[0] != graph.n_patches:
        raise ValueError("label matrices must be (P, d) and aligned with the graph")
    if alpha < 0 or not lam > 0:
        raise ValueError("need alpha >= 0 and lam > 0")
    out = Z.copy()
    R = _residuals(out, graph)
    _gs_sweep(out, Y, R, graph.in_ptr, graph.in_idx, graph.in_w, graph.has_out, graph.in_sq, float(alpha), float(lam))
    return out


def transfer_objective(Z: np.ndarray, Y: np.ndarray, graph: WeightedPatchGraph, alpha: float, lam: float) -> float:
    """The diffusion quadratic: alpha * reconstruction + lam * coupling."""
    R = _residuals(np.asarray(Z, dtype=np.float64), graph)
    return float(alpha * (R * R).sum() + lam * ((Z - Y) ** 2).sum())


def run_diffusion(
    Y: np.ndarray,
    graph: WeightedPatchGraph,
    image_patches: Sequence[tuple[Image, Sequence[Patch]]],
    config: CosegConfig,
) -> np.ndarray:
    """Iterate sweeps until the labels stop moving, keeping values in [0, 1].

    After each sweep the labels of any image whose back-projected pixel field
    leaves [0, 1] are min-max normalized over that field and re-extracted
    (a constant out-of-range field maps to 0.5). Stops when the largest
    coordinate change falls below ``config.diffusion_tol`` or after
    ``config.diffusion_max_sweeps`` sweeps. With transfer disabled the
    discrete labels are returned unchanged.
    """
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if not config.transfer_enabled:
        return Y.copy()
    Z = Y.copy()
    for _ in range(config.diffusion_max_sweeps):
        Z_new = diffusion_sweep(Z, Y, graph, config.alpha, config.lam)
        _normalize_per_image(Z_new, image_patches)
        delta = float(np.abs(Z_new - Z).max())
        Z = Z_new
        if delta < config.diffusion_tol:
            break
    return Z


def _normalize_per_image(Z: np.ndarray, image_patches: Sequence[tuple[Image, Sequence[Patch]]]) -> None:
    eps = 1e-12
    for image, patches in image_patches:
        rows = [p.patch_id for p in patches]
        if not rows:
            continue
        zmin = Z[rows].min()
        zmax = Z[rows].max()
        if zmin >= -eps and zmax <= 1.0 + eps:
            Z[rows] = np.clip(Z[rows], 0.0, 1.0)
            continue
        field, _ = backproject(Z, patches, image)
        lo, hi = field.min(), field.max()
        if hi > lo:
            field = (field - lo) / (hi - lo)
        else:
            field = np.full_like(field, 0.5)
        for p in patches:
            Z[p.patch_id] = extract_patch_labels(field, p)


def backproject(Z: np.ndarray, patches: Sequence[Patch], image: Image) -> tuple[np.ndarray, np.ndarray]:
    """Project patch label vectors back to the pixel grid of one image.

    Each patch vector is bilinearly upsampled to its window and the
    contributions are averaged per pixel; pixels no patch covers get the
    neutral value 0.5. Returns the soft field and the integer coverage map.
    """
    h, w = image.height, image.width
    acc = np.zeros((h, w))
    for p in patches:
        ys, xs = p.rect.slices()
        block = np.asarray(Z[p.patch_id], dtype=np.float64).reshape(BLOCK_SIDE, BLOCK_SIDE)
        acc[ys, xs] += resample_bilinear(block, p.rect.side, p.rect.side)
    cover = coverage_map(patches, image)
    field = np.full((h, w), 0.5)
    nz = cover > 0
    field[nz] = acc[nz] / cover[nz]
    return field, cover
