from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateSourceError
from .mesh import PointCloud

_EXTENT_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Obb:
    center: np.ndarray
    axes: np.ndarray  # rows are unit axis directions
    half_extents: np.ndarray  # sorted descending

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))


def _fix_sign(axis):
    # largest-magnitude component positive; argmax picks the first on ties
    i = int(np.argmax(np.abs(axis)))
    return -axis if axis[i] < 0 else axis


def compute_obb(points) -> Obb:
    """PCA-aligned bounding box of a point set.

    Axes are the covariance eigenvectors, ordered so the half-extents come out
    descending.  The first two axes get the sign convention of ``_fix_sign``;
    the third is their cross product so the frame stays right-handed.
    """
    p = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("compute_obb needs at least one point")
    mean = p.mean(axis=0)
    d = p - mean
    cov = d.T @ d / len(p)
    _, vecs = np.linalg.eigh(cov)
    axes = vecs.T[::-1]  # descending variance
    proj = d @ axes.T
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    half = 0.5 * (hi - lo)
    order = np.argsort(-half, kind="stable")
    axes, lo, hi, half = axes[order], lo[order], hi[order], half[order]
    a0, a1 = _fix_sign(axes[0]), _fix_sign(axes[1])
    a1 = a1 - a0 * (a0 @ a1)
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(a0, a1)
    R = np.stack([a0, a1, a2])
    # recompute ranges in the final (possibly sign-flipped) frame
    proj = d @ R.T
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = mean + 0.5 * (lo + hi) @ R
    return Obb(center, R, 0.5 * (hi - lo))


def estimate_scale_from_obb(source: Obb, target: Obb) -> float:
    """Geometric mean of matched half-extent ratios over non-degenerate axes."""
    src = np.asarray(source.half_extents, dtype=np.float64)
    tgt = np.asarray(target.half_extents, dtype=np.float64)
    valid = (src > _EXTENT_EPS) & (tgt > _EXTENT_EPS)
    if not np.any(src > _EXTENT_EPS):
        raise DegenerateSourceError(f"source OBB is degenerate: extents {src}")
    if not np.any(valid):
        raise DegenerateSourceError(f"no axis with positive extent on both boxes: {src} vs {tgt}")
    return float(np.exp(np.mean(np.log(tgt[valid] / src[valid]))))
