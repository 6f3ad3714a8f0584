"""Cross-image patch correspondence by nearest-neighbour descriptor search.

Every patch is matched to exactly one patch in each other image of the set
(squared L2 distance over HOG descriptors, candidates from all scales).
Distances are computed by direct subtraction rather than the Gram expansion
so that identical descriptors compare at exactly zero and the
smallest-patch-id tie rule is honoured bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Patch

__all__ = ["NeighborList", "match_into_image", "build_neighborhood", "neighbor_dump_lines"]

_CHUNK = 128


@dataclass
class NeighborList:
    """Matched neighbours of one patch: at most one per other image."""

    patch_id: int
    neighbors: list[int] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)


def match_into_image(query: np.ndarray, candidates: np.ndarray, candidate_ids: Sequence[int]) -> int:
    """Return the candidate patch id with minimal squared L2 distance.

    Ties are broken by the smallest patch id.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise ValueError("candidate set must be a nonempty (N, D) matrix")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (candidates.shape[1],):
        raise ValueError("query/candidate dimension mismatch")
    ids = np.asarray(candidate_ids, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    d = ((candidates[order] - query) ** 2).sum(axis=1)
    return int(ids[order][int(np.argmin(d))])


def build_neighborhood(all_patches: Sequence[Patch], descriptors: np.ndarray) -> list[NeighborList]:
    """Match every patch into every other image of the set.

    ``descriptors`` is indexed by patch id. Returns one :class:`NeighborList`
    per patch (ordered by patch id), each holding one neighbour per other
    image; with a single image all lists are empty.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if len(all_patches) != descriptors.shape[0]:
        raise ValueError("one descriptor row per patch required")
    patches = sorted(all_patches, key=lambda p: p.patch_id)
    if [p.patch_id for p in patches] != list(range(len(patches))):
        raise ValueError("patch ids must be dense 0..P-1")

    image_order: list[str] = []
    for p in patches:
        if p.image_id not in image_order:
            image_order.append(p.image_id)
    by_image = {im: np.array([p.patch_id for p in patches if p.image_id == im]) for im in image_order}

    lists = [NeighborList(p.patch_id) for p in patches]
    query_ids = np.arange(len(patches))
    src_image = np.array([image_order.index(p.image_id) for p in patches])
    for b, target in enumerate(image_order):
        cand_ids = by_image[target]
        cand = descriptors[cand_ids]
        take = query_ids[src_image != b]
        for lo in range(0, take.size, _CHUNK):
            chunk = take[lo : lo + _CHUNK]
            diff = descriptors[chunk][:, None, :] - cand[None, :, :]
            d = np.einsum("qcd,qcd->qc", diff, diff)
            best = np.argmin(d, axis=1)
            for row, q in enumerate(chunk):
                lists[q].neighbors.append(int(cand_ids[best[row]]))
                lists[q].distances.append(float(d[row, best[row]]))
    return lists


def neighbor_dump_lines(lists: Sequence[NeighborList]):
    """Debug dump: one text record per patch with neighbour ids and distances."""
    for nl in lists:
        pairs = " ".join(f"{j}:{d:.6g}" for j, d in zip(nl.neighbors, nl.distances))
        yield f"{nl.patch_id} {pairs}".rstrip()
