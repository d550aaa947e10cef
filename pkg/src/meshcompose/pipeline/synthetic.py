"""Synthetic two-object scenes with known ground-truth poses.

Assets are unions of disjoint primitives (a box with a sphere and a post
attached off-centre to two of its faces), so they are watertight and have no
rotational symmetry.  Guidance meshes are the assets under random similarity
transforms, optionally degraded:

* ``clean``     exact copies
* ``holes``     25% of faces deleted at random
* ``occluded``  only the faces on one side of a random plane, 40% of the area
* ``colliding`` clean, but the second object is pushed into the first until
                the pair's volumetric IoU is 0.30
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .._random import rng
from ..geometry.bvh import Bvh, sample_interior
from ..geometry.io import save_obj
from ..geometry.mesh import TriangleMesh
from ..geometry.primitives import box, cylinder, icosphere
from ..geometry.transform import SimilarityTransform
from .scene import ObjectEntry, SceneParams, SceneSpec

KINDS = ("clean", "holes", "occluded", "colliding")
HOLE_FRACTION = 0.25
CROP_FRACTION = 0.40
TARGET_IOU = 0.30
GAP = 0.03  # between the primitives of one asset
LAYOUT_GAP = 0.1  # between the bounding spheres of separated objects, relative to their sum


def make_asset(g) -> TriangleMesh:
    size = g.uniform(0.5, 1.0, 3)
    half = size / 2
    body = box(size, divisions=6)
    axes = g.permutation(6)[:2]  # box faces to attach to: 0..2 = +x,+y,+z, 3..5 = -x,-y,-z
    parts = [body]
    for n, face in enumerate(axes):
        ax, sign = int(face % 3), (1.0 if face < 3 else -1.0)
        u, v = (ax + 1) % 3, (ax + 2) % 3
        c = np.zeros(3)
        if n == 0:
            r = g.uniform(0.12, 0.22)
            c[ax] = sign * (half[ax] + GAP + r)
            c[u] = g.uniform(-1, 1) * max(half[u] - r, 0.0)
            c[v] = g.uniform(-1, 1) * max(half[v] - r, 0.0)
            parts.append(icosphere(2, r, c))
        else:
            r, h = g.uniform(0.06, 0.12), g.uniform(0.3, 0.6)
            # the post stands on the face, its axis along the face normal
            c[u] = g.uniform(-1, 1) * max(half[u] - r, 0.0)
            c[v] = g.uniform(-1, 1) * max(half[v] - r, 0.0)
            post = cylinder(r, h, 24, rings=4)
            R = np.eye(3)[[u, v, ax]].T  # local z -> face normal axis
            if np.linalg.det(R) < 0:
                R[:, 0] *= -1
            verts = post.vertices @ R.T
            verts[:, ax] += sign * (half[ax] + GAP + h / 2)
            verts += c
            parts.append(TriangleMesh(verts, post.faces))
    mesh = TriangleMesh.concatenate(parts)
    return TriangleMesh(mesh.vertices - mesh.aabb.center, mesh.faces)


def random_similarity(g, diagonal) -> SimilarityTransform:
    """Scale in [0.5, 2], uniform rotation, translation up to one scaled diagonal."""
    s = g.uniform(0.5, 2.0)
    R = Rotation.from_quat(g.normal(size=4)).as_matrix()
    t = _unit(g) * g.uniform(0.0, 1.0) * diagonal * s
    return SimilarityTransform(s, R, t)


def _radius(mesh):
    return float(np.linalg.norm(mesh.vertices, axis=1).max())


def _unit(g):
    d = g.normal(size=3)
    return d / np.linalg.norm(d)


def delete_faces(mesh, fraction, g) -> TriangleMesh:
    k = int(round(fraction * len(mesh.faces)))
    keep = np.ones(len(mesh.faces), bool)
    keep[g.choice(len(mesh.faces), k, replace=False)] = False
    return mesh.submesh(keep)


def halfspace_crop(mesh, fraction, g) -> TriangleMesh:
    """Faces on the positive side of a random plane holding ``fraction`` of the area."""
    u = _unit(g)
    h = mesh.triangles.mean(axis=1) @ u
    order = np.argsort(-h, kind="stable")
    cum = np.cumsum(mesh.face_areas[order])
    n = int(np.searchsorted(cum, fraction * cum[-1])) + 1
    keep = np.zeros(len(mesh.faces), bool)
    keep[order[:n]] = True
    return mesh.submesh(keep)


def overlap_iou(A: TriangleMesh, B: TriangleMesh, interior_b, vol_a, vol_b) -> float:
    """IoU from the fraction of B's interior samples that fall inside A."""
    return _iou_from_inside(Bvh.of_mesh(A), interior_b, vol_a, vol_b)


def _iou_from_inside(bvh_a, interior_b, vol_a, vol_b):
    inside, _ = bvh_a.inside(interior_b)
    inter = inside.mean() * vol_b
    return float(inter / (vol_a + vol_b - inter))


PUSH_SCAN = 48
PUSH_TRIES = 32


def _push_into(A, B_local, T_b, direction, target, seed):
    """Slide B along ``direction`` toward A's centre until the IoU estimate hits ``target``.

    IoU need not grow monotonically along the path (the assets are not
    convex), so the path is scanned from outside and the first crossing is
    bisected.  When a path never reaches ``target`` the next try draws a
    fresh direction and rotation; if none does, the closest scanned placement
    is returned.
    """
    pts = sample_interior(B_local, 20_000, seed)
    bvh = Bvh.of_mesh(A)
    va, vb = A.volume, B_local.volume * T_b.scale**3
    reach = _radius(A) + T_b.scale * _radius(B_local)
    g = rng(seed, 0x5C, 0xB15)
    best, best_err = None, np.inf
    for attempt in range(PUSH_TRIES):
        u, R = direction, T_b.rotation
        if attempt:
            u, R = _unit(g), Rotation.from_quat(g.normal(size=4)).as_matrix()

        def at(d):
            return SimilarityTransform(T_b.scale, R, A.aabb.center + d * u)

        def iou(d):
            return _iou_from_inside(bvh, at(d).apply(pts), va, vb)

        ds = np.linspace(reach, 0.0, PUSH_SCAN + 1)
        prev = ds[0]
        for d in ds[1:]:
            v = iou(d)
            if abs(v - target) < best_err:
                best, best_err = at(d), abs(v - target)
            if v >= target:
                lo, hi = d, prev  # iou(lo) >= target > iou(hi)
                for _ in range(30):
                    mid = 0.5 * (lo + hi)
                    if iou(mid) >= target:
                        lo = mid
                    else:
                        hi = mid
                return at(0.5 * (lo + hi))
            prev = d
    return best


def generate_synthetic_case(kind: str, seed: int, out_dir, params: SceneParams | None = None):
    """Write assets, guidance, ``scene.json`` and ``ground_truth.json`` under ``out_dir``.

    Returns ``(scene path, {object id: ground-truth transform})``; each
    transform maps the asset onto its guidance.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    out = Path(out_dir)
    (out / "assets").mkdir(parents=True, exist_ok=True)
    (out / "guidance").mkdir(parents=True, exist_ok=True)
    g = rng(seed, 0x5C, KINDS.index(kind))
    ids = ["obj0", "obj1"]
    assets = [make_asset(g), make_asset(g)]
    truth = {}

    T0 = random_similarity(g, assets[0].aabb.diagonal)
    truth[ids[0]] = T0
    A_posed = assets[0].transformed(T0)
    T1 = random_similarity(g, assets[1].aabb.diagonal)
    u = _unit(g)
    if kind == "colliding":
        # similar volumes, otherwise an IoU of 0.3 may be out of reach
        s1 = float(np.clip(T0.scale * (assets[0].volume / assets[1].volume) ** (1 / 3), 0.5, 2.0))
        T1 = _push_into(A_posed, assets[1], SimilarityTransform(s1, T1.rotation), u, TARGET_IOU, seed)
    else:
        # keep the second object clear of the first: bounding spheres apart along u
        dist = (1.0 + LAYOUT_GAP) * (T0.scale * _radius(assets[0]) + T1.scale * _radius(assets[1]))
        T1 = SimilarityTransform(T1.scale, T1.rotation, T0.translation + dist * u)
    truth[ids[1]] = T1

    entries = []
    for oid, asset in zip(ids, assets):
        guide = asset.transformed(truth[oid])
        if kind == "holes":
            guide = delete_faces(guide, HOLE_FRACTION, g)
        elif kind == "occluded":
            guide = halfspace_crop(guide, CROP_FRACTION, g)
        save_obj(out / "assets" / f"{oid}.obj", asset)
        save_obj(out / "guidance" / f"{oid}.obj", guide)
        entries.append(ObjectEntry(oid, f"assets/{oid}.obj", f"guidance/{oid}.obj"))

    spec = SceneSpec(tuple(entries), params or SceneParams(seed=seed), base_dir=str(out))
    spec.save(out / "scene.json")
    with open(out / "ground_truth.json", "w") as fh:
        json.dump({"kind": kind, "seed": seed, "transforms": {k: v.to_dict() for k, v in truth.items()}}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out / "scene.json", truth
