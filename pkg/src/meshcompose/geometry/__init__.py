from .bounds import Obb, compute_obb, estimate_scale_from_obb
from .bvh import Bvh
from .intersect import triangle_triangle_intersect
from .io import load_mesh, save_obj
from .mesh import Aabb, PointCloud, TriangleMesh, sample_surface
from .transform import SimilarityTransform, apply_transform, compose, exp_so3, rotation_angle_between, transform_errors

__all__ = [
    "Aabb", "Bvh", "Obb", "PointCloud", "SimilarityTransform", "TriangleMesh",
    "apply_transform", "compose", "compute_obb", "estimate_scale_from_obb", "exp_so3",
    "load_mesh", "rotation_angle_between", "sample_surface", "save_obj",
    "transform_errors", "triangle_triangle_intersect",
]
