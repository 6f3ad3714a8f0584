"""Intra-image segmentation energy and its exact binary minimization.

The per-image energy is the usual foreground/background MRF: per-pixel
negative log likelihoods under two Gaussian mixture color models plus a
contrast-sensitive smoothness cost over the 8-neighbourhood. Because the
pairwise term is submodular the global minimizer is computed exactly by
max-flow/min-cut; capacities are scaled to int64 at ~1e-9 relative
granularity for the scipy solver.

The shape-transfer coupling enters as a per-pixel linear bias on the
foreground cost (see :func:`segment_with_transfer`), so one cut per image
also solves the transfer-augmented subproblem exactly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .core import CosegWarning

__all__ = [
    "ColorModel",
    "UnaryField",
    "PairwiseField",
    "fit_gmm",
    "unary_costs",
    "pairwise_costs",
    "graph_cut",
    "segment_with_transfer",
    "segmentation_energy",
]

DENSITY_FLOOR = 1e-12
_COV_EIG_FLOOR = 1e-4
_LOG2PI = np.log(2.0 * np.pi)

# 8-neighbourhood, one entry per unordered pair: (dy, dx, distance)
_OFFSETS = ((0, 1, 1.0), (1, 0, 1.0), (1, 1, np.sqrt(2.0)), (1, -1, np.sqrt(2.0)))


@dataclass(frozen=True)
class ColorModel:
    """Gaussian mixture over RGB with full covariances.

    Covariance eigenvalues are floored at 1e-4 so every component stays
    symmetric positive definite and densities stay finite.
    """

    weights: np.ndarray  # (K,)
    means: np.ndarray    # (K, 3)
    covs: np.ndarray     # (K, 3, 3)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def log_component_densities(self, pixels: np.ndarray) -> np.ndarray:
        """Per-component Gaussian log densities, shape (N, K)."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        n, d = pixels.shape
        out = np.empty((n, self.n_components))
        for k in range(self.n_components):
            chol = np.linalg.cholesky(self.covs[k])
            diff = pixels - self.means[k]
            z = np.linalg.solve(chol, diff.T)
            maha = (z * z).sum(axis=0)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            out[:, k] = -0.5 * (d * _LOG2PI + logdet + maha)
        return out

    def density(self, pixels: np.ndarray) -> np.ndarray:
        """Mixture density per pixel, shape (N,)."""
        logd = self.log_component_densities(pixels)
        logw = np.log(np.maximum(self.weights, 1e-300))
        m = (logd + logw).max(axis=1, keepdims=True)
        return np.exp(m[:, 0]) * np.exp(logd + logw - m).sum(axis=1)


@dataclass(frozen=True)
class UnaryField:
    """Per-pixel label costs (negative log color likelihoods)."""

    cost_bg: np.ndarray
    cost_fg: np.ndarray

    def __post_init__(self):
        if self.cost_bg.shape != self.cost_fg.shape:
            raise ValueError("cost field shape mismatch")
        if not (np.isfinite(self.cost_bg).all() and np.isfinite(self.cost_fg).all()):
            raise ValueError("unary costs must be finite")


@dataclass(frozen=True)
class PairwiseField:
    """Contrast-sensitive edge weights over the 8-neighbourhood.

    ``weights[k]`` holds the costs of the edges between pixel (y, x) and
    (y + dy, x + dx) for the k-th offset; symmetry is implicit in the
    unordered-pair storage.
    """

    shape: tuple[int, int]
    offsets: tuple[tuple[int, int, float], ...]
    weights: tuple[np.ndarray, ...]
    beta: float

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (p, q, w) arrays over all neighbour pairs."""
        h, w = self.shape
        idx = np.arange(h * w).reshape(h, w)
        ps, qs, ws = [], [], []
        for (dy, dx, _), wt in zip(self.offsets, self.weights):
            y0, y1 = (0, h - dy) if dy >= 0 else (-dy, h)
            x0, x1 = (0, w - dx) if dx >= 0 else (-dx, w)
            ps.append(idx[y0:y1, x0:x1].ravel())
            qs.append(idx[y0 + dy : y1 + dy, x0 + dx : x1 + dx].ravel())
            ws.append(wt[y0:y1, x0:x1].ravel())
        return np.concatenate(ps), np.concatenate(qs), np.concatenate(ws)


def _floor_covariance(cov: np.ndarray) -> np.ndarray:
    cov = (cov + cov.T) / 2.0
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, _COV_EIG_FLOOR)
    return (vecs * vals) @ vecs.T


def _kmeans_pp(pixels: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    """Seeded k-means++ initialization plus a few Lloyd refinements."""
    n = pixels.shape[0]
    centers = np.empty((k, pixels.shape[1]))
    centers[0] = pixels[rng.integers(n)]
    d2 = ((pixels - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = centers[0]
            break
        centers[i] = pixels[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((pixels - centers[i]) ** 2).sum(axis=1))
    for _ in range(iters):
        d = ((pixels[:, None, :] - centers[None]) ** 2).sum(axis=2)
        lab = d.argmin(axis=1)
        for i in range(k):
            sel = lab == i
            if sel.any():
                centers[i] = pixels[sel].mean(axis=0)
    return centers


def fit_gmm(
    pixels: np.ndarray,
    n_components: int,
    seed: int = 0,
    tol: float = 1e-5,
    max_iters: int = 100,
    return_trace: bool = False,
):
    """Fit a :class:`ColorModel` by EM with seeded k-means++ initialization.

    Stops when the mean log likelihood improves by less than ``tol`` per
    pixel or after ``max_iters`` EM steps; the likelihood trace is
    non-decreasing. If fewer pixels than components are given the component
    count is reduced with a warning.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    n = pixels.shape[0]
    if n == 0:
        raise ValueError("cannot fit a color model on zero pixels")
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    k = n_components
    if n < k:
        warnings.warn(f"only {n} pixels for {k} components, reducing to {n}", CosegWarning, stacklevel=2)
        k = n

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(pixels, k, rng)
    d = ((pixels[:, None, :] - centers[None]) ** 2).sum(axis=2)
    lab = d.argmin(axis=1)
    weights = np.full(k, 1.0 / k)
    means = centers.copy()
    covs = np.empty((k, 3, 3))
    for i in range(k):
        sel = lab == i
        if sel.any():
            means[i] = pixels[sel].mean(axis=0)
            diff = pixels[sel] - means[i]
            covs[i] = _floor_covariance(diff.T @ diff / sel.sum())
            weights[i] = sel.mean()
        else:
            covs[i] = np.eye(3) * _COV_EIG_FLOOR
            weights[i] = 0.0
    weights = np.maximum(weights, 1e-10)
    weights /= weights.sum()

    model = ColorModel(weights, means, covs)
    trace = []
    prev = -np.inf
    for _ in range(max_iters):
        logd = model.log_component_densities(pixels) + np.log(model.weights)
        m = logd.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logd - m).sum(axis=1))
        ll = lse.mean()
        trace.append(ll)
        resp = np.exp(logd - lse[:, None])
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ pixels) / nk[:, None]
        covs = np.empty((k, 3, 3))
        for i in range(k):
            diff = pixels - means[i]
            covs[i] = _floor_covariance((resp[:, i, None] * diff).T @ diff / nk[i])
        model = ColorModel(weights / weights.sum(), means, covs)
        if ll - prev < tol:
            break
        prev = ll
    if return_trace:
        return model, trace
    return model


def unary_costs(pixels: np.ndarray, fg: ColorModel, bg: ColorModel) -> UnaryField:
    """Negative log mixture likelihoods per pixel, floored at 1e-12 density."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape[:2]
    flat = pixels.reshape(-1, 3)
    cf = -np.log(np.maximum(fg.density(flat), DENSITY_FLOOR)).reshape(h, w)
    cb = -np.log(np.maximum(bg.density(flat), DENSITY_FLOOR)).reshape(h, w)
    return UnaryField(cost_bg=cb, cost_fg=cf)


def pairwise_costs(pixels: np.ndarray, gamma: float = 50.0) -> PairwiseField:
    """Contrast-sensitive smoothness weights over the 8-neighbourhood.

    ``weight(p, q) = gamma * exp(-beta * ||c_p - c_q||^2) / dist(p, q)`` with
    ``beta`` set from the mean squared color difference over all adjacent
    pairs (0 for a constant image).
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape[:2]
    sq = []
    for dy, dx, _ in _OFFSETS:
        y0, y1 = (0, h - dy) if dy >= 0 else (-dy, h)
        x0, x1 = (0, w - dx) if dx >= 0 else (-dx, w)
        a = pixels[y0:y1, x0:x1]
        b = pixels[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
        sq.append(((a - b) ** 2).sum(axis=2))
    mean_sq = float(np.concatenate([s.ravel() for s in sq]).mean()) if h * w > 1 else 0.0
    beta = 0.0 if mean_sq == 0.0 else 1.0 / (2.0 * mean_sq)

    weights = []
    for (dy, dx, dist), s in zip(_OFFSETS, sq):
        full = np.zeros((h, w))
        y0, y1 = (0, h - dy) if dy >= 0 else (-dy, h)
        x0, x1 = (0, w - dx) if dx >= 0 else (-dx, w)
        full[y0:y1, x0:x1] = gamma * np.exp(-beta * s) / dist
        weights.append(full)
    return PairwiseField((h, w), _OFFSETS, tuple(weights), beta)


def graph_cut(unary: UnaryField, pairwise: PairwiseField) -> np.ndarray:
    """Global minimizer of the binary MRF energy via max-flow/min-cut.

    Returns the foreground mask of a labeling minimizing
    ``sum_p unary(p, y_p) + sum_pq w_pq [y_p != y_q]``. Costs may be any
    finite values: both labels of a pixel are shifted by the same amount
    internally so capacities are nonnegative, which leaves the minimizer
    unchanged.
    """
    h, w = unary.cost_bg.shape
    if pairwise.shape != (h, w):
        raise ValueError("unary/pairwise shape mismatch")
    n = h * w
    cb = unary.cost_bg.ravel().copy()
    cf = unary.cost_fg.ravel().copy()
    shift = np.minimum(cb, cf)
    cb -= shift
    cf -= shift

    p, q, wts = pairwise.edge_arrays()
    caps = np.concatenate([cb, cf, wts, wts])
    scale = (2**31 - 1) / max(1.0, float(caps.max()))
    icaps = np.rint(caps * scale).astype(np.int64)
    source, sink = n, n + 1
    rows = np.concatenate([np.full(n, source), np.arange(n), p, q])
    cols = np.concatenate([np.arange(n), np.full(n, sink), q, p])
    g = csr_matrix((icaps, (rows, cols)), shape=(n + 2, n + 2))
    res = maximum_flow(g, source, sink)
    resid = g - res.flow
    resid.data = (resid.data > 0).astype(np.int64)
    resid.eliminate_zeros()
    reach = breadth_first_order(resid, source, directed=True, return_predecessors=False)
    fg = np.zeros(n + 2, dtype=bool)
    fg[reach] = True
    return fg[:n].reshape(h, w)


def segment_with_transfer(
    pixels: np.ndarray,
    fg: ColorModel,
    bg: ColorModel,
    zbar: np.ndarray,
    cover: np.ndarray,
    lam: float,
    gamma: float = 50.0,
) -> np.ndarray:
    """One cut of the transfer-augmented per-image subproblem.

    For binary labels the patch coupling collapses to the per-pixel
    foreground bias ``lam * cover * (1 - 2 * zbar)``, which is added to the
    foreground cost; where that sum would go negative both labels are shifted
    up equally, leaving the minimizer unchanged.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape[:2]
    zbar = np.asarray(zbar, dtype=np.float64)
    cover = np.asarray(cover, dtype=np.float64)
    if zbar.shape != (h, w) or cover.shape != (h, w):
        raise ValueError("zbar/cover must match image dimensions")
    if zbar.min() < 0.0 or zbar.max() > 1.0:
        raise ValueError("zbar values must lie in [0, 1]")

    unary = unary_costs(pixels, fg, bg)
    bias = lam * cover * (1.0 - 2.0 * zbar)
    cf = unary.cost_fg + bias
    neg = np.minimum(cf, 0.0)
    field = UnaryField(cost_bg=unary.cost_bg - neg, cost_fg=cf - neg)
    return graph_cut(field, pairwise_costs(pixels, gamma))


def segmentation_energy(unary: UnaryField, pairwise: PairwiseField, mask: np.ndarray) -> float:
    """MRF energy of a labeling under the given fields."""
    mask = np.asarray(mask, dtype=bool)
    e = float(np.where(mask, unary.cost_fg, unary.cost_bg).sum())
    p, q, wts = pairwise.edge_arrays()
    flat = mask.ravel()
    e += float(wts[flat[p] != flat[q]].sum())
    return e
