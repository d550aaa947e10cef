"""Interpenetration metrics between two meshes.

``r_surface`` is the area of triangles touching the other mesh over the total
area of both.  ``r_volume`` is a Monte Carlo intersection-over-union of the
two solids, sampled uniformly in their joint bounding box.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from ._random import rng
from .errors import DegenerateMeshError, NoInteriorSamplesError
from .geometry import _kernels as K
from .geometry.bvh import Bvh
from .geometry.mesh import PointCloud, TriangleMesh, sample_surface
from .sdf import WATERTIGHT_WARN_RATE, WatertightnessWarning, max_penetration_depth

DEFAULT_SAMPLES = 1_000_000
PENETRATION_SAMPLES = 20_000
_CHUNK = 250_000


@dataclass(frozen=True)
class IntersectionReport:
    r_surface: float
    r_volume: float
    n_samples: int
    seed: int
    intersecting_face_counts: tuple
    max_penetration_depth: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intersecting_face_counts"] = list(self.intersecting_face_counts)
        return d


def _check(mesh):
    if len(mesh.faces) == 0 or not mesh.area > 0:
        raise DegenerateMeshError("mesh has zero surface area")


def _box_tol(A, B):
    ext = max(float(np.abs(A.vertices).max()), float(np.abs(B.vertices).max()), 1.0)
    return 1e-9 * ext


def _mesh_key(m):
    return (len(m.faces), len(m.vertices), m.vertices.tobytes(), m.faces.tobytes())


def involved_faces(A: TriangleMesh, B: TriangleMesh, brute_force=False):
    """Boolean masks of the faces of A and of B that touch the other mesh.

    Zero-area faces never count.  The result does not depend on argument
    order: the pair is processed in a canonical order and swapped back.
    """
    _check(A)
    _check(B)
    if _mesh_key(B) < _mesh_key(A):
        b, a = involved_faces(B, A, brute_force)
        return a, b
    okA = A.face_areas > 1e-14
    okB = B.face_areas > 1e-14
    if brute_force:
        return K.involved_brute(A.triangles, okA, B.triangles, okB)
    bvh = Bvh.of_mesh(B)
    return K.involved_bvh(A.triangles, okA, B.triangles, okB, *bvh.arrays[:7], _box_tol(A, B))


def surface_intersection_ratio(A: TriangleMesh, B: TriangleMesh, brute_force=False):
    """Returns ``(ratio, (faces of A involved, faces of B involved))``."""
    inv_a, inv_b = involved_faces(A, B, brute_force)
    num = math.fsum(np.concatenate([A.face_areas[inv_a], B.face_areas[inv_b]]))
    den = math.fsum(np.concatenate([A.face_areas, B.face_areas]))
    return num / den, (int(inv_a.sum()), int(inv_b.sum()))


def _inside(mesh_or_grid, pts, bvh=None):
    if bvh is not None:
        return bvh.inside(pts)
    return mesh_or_grid.value(pts) < 0.0, np.zeros(len(pts), bool)


def volume_intersection_ratio(A: TriangleMesh, B: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0, grids=None) -> float:
    """Monte Carlo IoU of the solids bounded by A and B.

    Inside tests use ray parity unless ``grids=(grid_a, grid_b)`` is given, in
    which case the SDF sign is used instead.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    _check(A)
    _check(B)
    box = A.aabb.union(B.aabb)
    bvh_a = bvh_b = None
    if grids is None:
        bvh_a, bvh_b = Bvh.of_mesh(A), Bvh.of_mesh(B)
        grids = (None, None)
    g = rng(seed, 0x7E)
    both = either = disagree = 0
    for lo in range(0, n, _CHUNK):
        m = min(_CHUNK, n - lo)
        pts = box.min + g.random((m, 3)) * box.extent
        ia, da = _inside(grids[0], pts, bvh_a)
        ib, db = _inside(grids[1], pts, bvh_b)
        both += int(np.count_nonzero(ia & ib))
        either += int(np.count_nonzero(ia | ib))
        disagree += int(np.count_nonzero(da | db))
    if disagree > WATERTIGHT_WARN_RATE * n:
        warnings.warn(f"ray parity disagrees on {100 * disagree / n:.2f}% of samples; meshes are probably not watertight", WatertightnessWarning, stacklevel=2)
    if either == 0:
        raise NoInteriorSamplesError(f"none of the {n} samples fell inside either mesh")
    return both / either


def mesh_penetration_depth(A: TriangleMesh, points) -> float:
    """Deepest point of ``points`` inside the solid of A, measured exactly to A's surface."""
    p = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        return 0.0
    bvh = Bvh.of_mesh(A)
    inside, _ = bvh.inside(p)
    if not inside.any():
        return 0.0
    return float(bvh.closest_distance(p[inside]).max())


def intersection_report(A: TriangleMesh, B: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0, grids=None) -> IntersectionReport:
    """Both ratios plus the deeper of the two mutual penetration depths.

    Depths are probed at surface samples and vertices of each mesh against
    the other, through the grids when given, otherwise exactly.
    """
    r_s, counts = surface_intersection_ratio(A, B)
    r_v = volume_intersection_ratio(A, B, n, seed, grids)
    probe_b = np.vstack([sample_surface(B, PENETRATION_SAMPLES, seed).points, B.vertices])
    probe_a = np.vstack([sample_surface(A, PENETRATION_SAMPLES, seed + 1).points, A.vertices])
    if grids is not None:
        depth = max(max_penetration_depth(grids[0], probe_b), max_penetration_depth(grids[1], probe_a))
    else:
        depth = max(mesh_penetration_depth(A, probe_b), mesh_penetration_depth(B, probe_a))
    return IntersectionReport(r_s, r_v, n, seed, counts, depth)


__all__ = [
    "IntersectionReport",
    "intersection_report",
    "involved_faces",
    "max_penetration_depth",
    "mesh_penetration_depth",
    "surface_intersection_ratio",
    "volume_intersection_ratio",
]
