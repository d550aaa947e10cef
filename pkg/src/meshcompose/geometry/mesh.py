from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .._random import rng
from ..errors import DegenerateMeshError


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.min, np.float64).reshape(3)
        hi = _frozen(self.max, np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError("Aabb min must be <= max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def of(cls, points) -> "Aabb":
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(p.min(axis=0), p.max(axis=0))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))


class TriangleMesh:
    """Indexed triangle surface. Arrays are read-only once constructed."""

    def __init__(self, vertices, faces):
        v = _frozen(vertices, np.float64).reshape(-1, 3)
        f = _frozen(faces, np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("face with repeated vertex index")
        self.vertices = v
        self.faces = f

    def __repr__(self):
        return f"TriangleMesh({len(self.vertices)} vertices, {len(self.faces)} faces)"

    @cached_property
    def triangles(self) -> np.ndarray:
        """(n_faces, 3, 3) corner coordinates."""
        t = self.vertices[self.faces]
        t.setflags(write=False)
        return t

    @cached_property
    def face_normals_raw(self) -> np.ndarray:
        t = self.triangles
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        a = 0.5 * np.linalg.norm(self.face_normals_raw, axis=1)
        a.setflags(write=False)
        return a

    @cached_property
    def face_normals(self) -> np.ndarray:
        n = self.face_normals_raw
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def volume(self) -> float:
        """Signed enclosed volume (positive for a closed, outward-oriented mesh)."""
        T = self.triangles
        return float(np.einsum("ij,ij->", T[:, 0], np.cross(T[:, 1], T[:, 2])) / 6.0)

    @cached_property
    def aabb(self) -> Aabb:
        if len(self.vertices) == 0:
            raise DegenerateMeshError("mesh has no vertices")
        return Aabb.of(self.vertices)

    def require_valid(self) -> "TriangleMesh":
        if len(self.faces) == 0 or not self.area > 0:
            raise DegenerateMeshError(f"mesh has zero surface area ({len(self.faces)} faces)")
        return self

    def transformed(self, t) -> "TriangleMesh":
        return TriangleMesh(t.apply(self.vertices), self.faces)

    def submesh(self, face_mask) -> "TriangleMesh":
        """Keep the selected faces; unreferenced vertices are dropped."""
        f = self.faces[np.asarray(face_mask)]
        used, inv = np.unique(f, return_inverse=True)
        return TriangleMesh(self.vertices[used], inv.reshape(-1, 3))

    @staticmethod
    def concatenate(meshes) -> "TriangleMesh":
        verts, faces, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + off)
            off += len(m.vertices)
        return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    face_index: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        p = _frozen(self.points, np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", p)
        if self.face_index is not None:
            object.__setattr__(self, "face_index", _frozen(self.face_index, np.int64).reshape(-1))
        if self.normals is not None:
            object.__setattr__(self, "normals", _frozen(self.normals, np.float64).reshape(-1, 3))

    def __len__(self):
        return len(self.points)

    def transformed(self, t) -> "PointCloud":
        normals = None if self.normals is None else self.normals @ t.rotation.T
        return PointCloud(t.apply(self.points), self.face_index, normals)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(
            self.points[idx],
            None if self.face_index is None else self.face_index[idx],
            None if self.normals is None else self.normals[idx],
        )


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Area-weighted uniform samples on the surface, deterministic in ``(mesh, n, seed)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas
    total = float(areas.sum()) if len(areas) else 0.0
    if not total > 0:
        raise DegenerateMeshError("cannot sample a zero-area mesh")
    g = rng(seed, 0x5A)
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, g.random(n), side="right")
    face = np.minimum(face, len(areas) - 1)
    u = g.random((n, 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    tri = mesh.triangles[face]
    pts = tri[:, 0] + u[:, :1] * (tri[:, 1] - tri[:, 0]) + u[:, 1:] * (tri[:, 2] - tri[:, 0])
    return PointCloud(pts, face, mesh.face_normals[face])
