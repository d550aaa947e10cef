"""Axis-aligned bounding-volume hierarchy over mesh triangles."""

from __future__ import annotations

import numpy as np

from .._random import rng
from . import _kernels as K

LEAF_SIZE = 4


class Bvh:
    """Median-split BVH. Build is deterministic (stable sorts only)."""

    def __init__(self, triangles, leaf_size=LEAF_SIZE):
        tris = np.ascontiguousarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
        if len(tris) == 0:
            raise ValueError("cannot build a BVH over zero triangles")
        self.tris = tris
        tmin = tris.min(axis=1)
        tmax = tris.max(axis=1)
        cent = 0.5 * (tmin + tmax)
        order = np.arange(len(tris), dtype=np.int64)
        nmin, nmax, left, right, start, count = [], [], [], [], [], []

        def new_node(lo, hi):
            nmin.append(tmin[order[lo:hi]].min(axis=0))
            nmax.append(tmax[order[lo:hi]].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(lo)
            count.append(hi - lo)
            return len(nmin) - 1

        stack = [(new_node(0, len(tris)), 0, len(tris))]
        while stack:
            node, lo, hi = stack.pop()
            if hi - lo <= leaf_size:
                continue
            idx = order[lo:hi]
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            srt = idx[np.argsort(c[:, axis], kind="stable")]
            order[lo:hi] = srt
            mid = (lo + hi) // 2
            l_node = new_node(lo, mid)
            r_node = new_node(mid, hi)
            left[node] = l_node
            right[node] = r_node
            count[node] = 0
            stack.append((r_node, mid, hi))
            stack.append((l_node, lo, mid))

        self.nmin = np.array(nmin)
        self.nmax = np.array(nmax)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.order = order

    @classmethod
    def of_mesh(cls, mesh) -> "Bvh":
        return cls(mesh.triangles)

    @property
    def arrays(self):
        return self.nmin, self.nmax, self.left, self.right, self.start, self.count, self.order, self.tris

    def closest_distance(self, points) -> np.ndarray:
        """Exact unsigned distance from each point to the triangle soup."""
        p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        return K.nearest_dist_many(p, *self.arrays)

    def inside(self, points, n_rays=3):
        """Ray-parity inside test with a majority vote over axis rays.

        Returns ``(inside, disagreement)`` boolean arrays.
        """
        p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        return K.inside_vote(p, n_rays, self.nmin[0], self.nmax[0], *self.arrays)


def sample_interior(mesh, n, seed, max_batches=64) -> np.ndarray:
    """Uniform samples inside the solid bounded by ``mesh`` (rejection in its AABB).

    Returns fewer than ``n`` points only if ``max_batches`` rounds of ``4 n``
    candidates were not enough, e.g. for an open or paper-thin mesh.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bvh = Bvh.of_mesh(mesh)
    box = mesh.aabb
    g = rng(seed, 0x1D)
    found = []
    have = 0
    for _ in range(max_batches):
        cand = box.min + g.random((4 * n, 3)) * box.extent
        inside, _ = bvh.inside(cand)
        found.append(cand[inside])
        have += int(inside.sum())
        if have >= n:
            break
    pts = np.concatenate(found) if found else np.zeros((0, 3))
    return pts[:n]
