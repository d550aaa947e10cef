from __future__ import annotations

import numpy as np

from ..errors import DegenerateTriangleError
from . import _kernels as K

MIN_TRIANGLE_AREA = 1e-14


def triangle_area(tri) -> float:
    t = np.asarray(tri, dtype=np.float64)
    return 0.5 * float(np.linalg.norm(np.cross(t[1] - t[0], t[2] - t[0])))


def triangle_triangle_intersect(t1, t2) -> bool:
    """True iff the closed triangles share a point (touching counts)."""
    a = np.ascontiguousarray(t1, dtype=np.float64).reshape(3, 3)
    b = np.ascontiguousarray(t2, dtype=np.float64).reshape(3, 3)
    for name, t in (("t1", a), ("t2", b)):
        if not triangle_area(t) > MIN_TRIANGLE_AREA:
            raise DegenerateTriangleError(f"{name} has area <= {MIN_TRIANGLE_AREA}")
    return bool(K.tri_tri(a, b))
