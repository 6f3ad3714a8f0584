"""Simplex-constrained least squares for patch reconstruction weights.

Each patch descriptor is approximated by a convex combination of its matched
neighbours' descriptors:

    min_w ||x_i - sum_j w_j x_j||^2   s.t.  w >= 0,  sum_j w_j = 1.

The simplex constraint concentrates weight on the few neighbours that agree
with the target and drives the weight of bad matches toward zero. The solver
is projected gradient descent with exact Euclidean projection onto the
simplex, a fixed 1/L step (L bounded by Gram-matrix row sums) and a uniform
cold start, which makes the result deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .matcher import NeighborList

__all__ = [
    "project_to_simplex",
    "solve_simplex_lsq",
    "learn_graph_weights",
    "WeightedPatchGraph",
]


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of the last axis onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    k = v.shape[-1]
    u = np.sort(v, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1) - 1.0
    idx = np.arange(1, k + 1)
    cond = u - css / idx > 0
    rho = k - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho + 1)[..., None]
    return np.maximum(v - theta, 0.0)


def _finalize(w: np.ndarray) -> np.ndarray:
    w = np.maximum(w, 0.0)
    return w / w.sum(axis=-1, keepdims=True)


def solve_simplex_lsq(
    target: np.ndarray,
    neighbors: np.ndarray,
    tol: float = 1e-8,
    max_iters: int = 500,
    return_trace: bool = False,
):
    """Weights minimizing ``||target - w @ neighbors||^2`` on the simplex.

    ``neighbors`` is ``(k, d)`` with one row per neighbour. Iterates until the
    objective decrease falls below ``tol``; the objective is non-increasing
    at every step. A final clip-and-renormalize enforces the simplex
    constraints exactly. With ``return_trace`` the per-iteration objective
    values are returned as well.
    """
    target = np.asarray(target, dtype=np.float64)
    neighbors = np.atleast_2d(np.asarray(neighbors, dtype=np.float64))
    if neighbors.shape[1] != target.shape[0]:
        raise ValueError("target/neighbor dimension mismatch")
    k = neighbors.shape[0]
    G = neighbors @ neighbors.T
    b = neighbors @ target
    c = float(target @ target)
    L = 2.0 * max(np.abs(G).sum(axis=1).max(), 1e-12)

    w = np.full(k, 1.0 / k)
    obj = float(w @ G @ w - 2.0 * w @ b + c)
    trace = [obj]
    for _ in range(max_iters):
        w = project_to_simplex(w - 2.0 * (G @ w - b) / L)
        new = float(w @ G @ w - 2.0 * w @ b + c)
        trace.append(new)
        if obj - new < tol:
            obj = new
            break
        obj = new
    w = _finalize(w)
    if return_trace:
        return w, trace
    return w


@dataclass
class WeightedPatchGraph:
    """Sparse cross-image neighbourhood system with learned weights.

    Rows are stored in CSR form over patch ids together with the transposed
    (incoming) adjacency, which the label diffusion needs. ``in_sq[i]`` is
    ``sum_j w_ji^2`` and ``has_out[i]`` flags a nonempty neighbourhood.
    """

    n_patches: int
    out_ptr: np.ndarray
    out_idx: np.ndarray
    out_w: np.ndarray
    in_ptr: np.ndarray
    in_idx: np.ndarray
    in_w: np.ndarray
    in_sq: np.ndarray
    has_out: np.ndarray

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[Sequence[int], Sequence[float]]]) -> "WeightedPatchGraph":
        """Build from per-patch ``(neighbor_ids, weights)`` pairs."""
        p = len(rows)
        out_ptr = np.zeros(p + 1, dtype=np.int64)
        idx_parts, w_parts = [], []
        for i, (ids, ws) in enumerate(rows):
            ids = np.asarray(ids, dtype=np.int64)
            ws = np.asarray(ws, dtype=np.float64)
            if ids.shape != ws.shape:
                raise ValueError(f"row {i}: ids/weights length mismatch")
            if np.any(ids == i):
                raise ValueError(f"row {i}: self edge")
            out_ptr[i + 1] = out_ptr[i] + ids.size
            idx_parts.append(ids)
            w_parts.append(ws)
        out_idx = np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.int64)
        out_w = np.concatenate(w_parts) if w_parts else np.zeros(0)
        if out_idx.size and (out_idx.min() < 0 or out_idx.max() >= p):
            raise ValueError("neighbor id out of range")

        counts = np.bincount(out_idx, minlength=p)
        in_ptr = np.zeros(p + 1, dtype=np.int64)
        np.cumsum(counts, out=in_ptr[1:])
        in_idx = np.zeros(out_idx.size, dtype=np.int64)
        in_w = np.zeros(out_idx.size)
        fill = in_ptr[:-1].copy()
        for i in range(p):
            for k in range(out_ptr[i], out_ptr[i + 1]):
                j = out_idx[k]
                in_idx[fill[j]] = i
                in_w[fill[j]] = out_w[k]
                fill[j] += 1
        in_sq = np.zeros(p)
        np.add.at(in_sq, out_idx, out_w**2)
        has_out = (out_ptr[1:] > out_ptr[:-1]).astype(np.float64)
        return cls(p, out_ptr, out_idx, out_w, in_ptr, in_idx, in_w, in_sq, has_out)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s = slice(self.out_ptr[i], self.out_ptr[i + 1])
        return self.out_idx[s], self.out_w[s]

    def validate(self, tol: float = 1e-9) -> None:
        if self.out_w.size and self.out_w.min() < 0:
            raise ValueError("negative weight")
        for i in range(self.n_patches):
            _, w = self.row(i)
            if w.size and abs(w.sum() - 1.0) > tol:
                raise ValueError(f"row {i} sums to {w.sum()}, not 1")

    def dump_lines(self):
        """Debug dump: one ``i j w_ij`` triple per edge."""
        for i in range(self.n_patches):
            ids, ws = self.row(i)
            for j, w in zip(ids, ws):
                yield f"{i} {j} {w:.9g}"


def learn_graph_weights(
    neighbor_lists: Sequence[NeighborList],
    descriptors: np.ndarray,
    tol: float = 1e-8,
    max_iters: int = 500,
) -> WeightedPatchGraph:
    """Solve the simplex least-squares problem independently per patch.

    Patches whose neighbour list is empty get an empty row. When every list
    has the same length (the usual case: one neighbour per other image) the
    solves run as one batched projected-gradient iteration.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    lists = sorted(neighbor_lists, key=lambda nl: nl.patch_id)
    if [nl.patch_id for nl in lists] != list(range(len(lists))):
        raise ValueError("neighbor lists must cover patch ids 0..P-1")

    rows: list[tuple[list[int], np.ndarray]] = [([], np.zeros(0)) for _ in lists]
    active = [nl for nl in lists if nl.neighbors]
    if active:
        sizes = {len(nl.neighbors) for nl in active}
        if len(sizes) == 1:
            ids = np.array([nl.neighbors for nl in active], dtype=np.int64)
            w = _solve_batch(descriptors, np.array([nl.patch_id for nl in active]), ids, tol, max_iters)
            for r, nl in enumerate(active):
                rows[nl.patch_id] = (nl.neighbors, w[r])
        else:
            for nl in active:
                w = solve_simplex_lsq(descriptors[nl.patch_id], descriptors[nl.neighbors], tol, max_iters)
                rows[nl.patch_id] = (nl.neighbors, w)
    return WeightedPatchGraph.from_rows(rows)


def _solve_batch(descriptors, targets, neighbor_ids, tol, max_iters):
    """Batched projected gradient over same-sized neighbourhoods."""
    p, k = neighbor_ids.shape
    G = np.empty((p, k, k))
    b = np.empty((p, k))
    chunk = max(1, int(2**22 // max(1, k * descriptors.shape[1])))
    for lo in range(0, p, chunk):
        hi = min(p, lo + chunk)
        N = descriptors[neighbor_ids[lo:hi]]
        G[lo:hi] = np.einsum("pkd,pld->pkl", N, N)
        b[lo:hi] = np.einsum("pkd,pd->pk", N, descriptors[targets[lo:hi]])
    L = 2.0 * np.maximum(np.abs(G).sum(axis=2).max(axis=1), 1e-12)

    w = np.full((p, k), 1.0 / k)
    obj = np.einsum("pk,pkl,pl->p", w, G, w) - 2.0 * np.einsum("pk,pk->p", w, b)
    for _ in range(max_iters):
        grad = 2.0 * (np.einsum("pkl,pl->pk", G, w) - b)
        w = project_to_simplex(w - grad / L[:, None])
        new = np.einsum("pk,pkl,pl->p", w, G, w) - 2.0 * np.einsum("pk,pk->p", w, b)
        if (obj - new).max() < tol:
            obj = new
            break
        obj = new
    return _finalize(w)
