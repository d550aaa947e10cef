"""Two-stage composition: align the anchor to its guidance, then place the
remaining objects one at a time against the union of everything placed so far.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..collision import optimize_placement
from ..errors import MeshComposeError, StageError
from ..geometry.bvh import sample_interior
from ..geometry.io import load_mesh, save_obj
from ..geometry.mesh import TriangleMesh, sample_surface
from ..metrics import intersection_report
from ..registration.align import _stage, global_to_local_align, initial_pose
from ..sdf import TransformedSdf, UnionSdf, bake_sdf
from .scene import ComposedScene, PlacedObject, SceneSpec

log = logging.getLogger(__name__)


def _load(spec: SceneSpec, path, object_id) -> TriangleMesh:
    return _stage("load", load_mesh, spec.resolve(path), object_id=object_id)


def select_anchor(spec: SceneSpec, guidance=None) -> str:
    """Object id of the anchor.

    An ``anchor_hint`` wins.  Otherwise the guidance mesh with the largest
    x-y projected bounding box area is chosen, then the largest box volume,
    then the earliest entry.  ``guidance`` may map ids to loaded meshes.
    """
    for o in spec.objects:
        if o.anchor_hint:
            return o.id
    best = None
    for i, o in enumerate(spec.objects):
        mesh = guidance[o.id] if guidance is not None else _load(spec, o.guidance_mesh_path, o.id)
        ext = mesh.aabb.extent
        key = (float(ext[0] * ext[1]), float(np.prod(ext)), -i)
        if best is None or key > best[0]:
            best = (key, o.id)
    return best[1]


@dataclass
class _Placed:
    """Working state for one object: its field and collision points, both in
    the object's own frame, plus the pose that puts them in the scene."""

    asset: TriangleMesh
    grid: object
    points: np.ndarray
    transform: object = None

    @property
    def mesh(self) -> TriangleMesh:
        return self.asset.transformed(self.transform)

    @property
    def field(self):
        return TransformedSdf(self.grid, self.transform)

    @property
    def world_points(self) -> np.ndarray:
        return self.transform.apply(self.points)


def _bake(spec: SceneSpec, mesh, object_id):
    return _stage("bake-sdf", bake_sdf, mesh, spec.params.sdf_resolution, object_id=object_id)


def _prepare(spec: SceneSpec, asset: TriangleMesh, object_id) -> _Placed:
    """Bake the object's field and draw its collision points (surface plus interior)."""
    p = spec.params
    src = _stage("sample", sample_surface, asset, p.sample_n, p.seed, object_id=object_id)
    pts = src.points
    if p.interior_n > 0:
        inner = _stage("sample", sample_interior, asset, p.interior_n, p.seed, object_id=object_id)
        pts = np.vstack([pts, inner])
    return _Placed(asset, _bake(spec, asset, object_id), pts)


def place_object(spec: SceneSpec, object_id, work: _Placed, guidance: TriangleMesh, placed, anchor_diagonal, asset_path=None) -> PlacedObject:
    """Stage 2 for one object against the already placed ones.

    OBB scale and coarse pose first, then collision-aware refinement.  Sets
    ``work.transform`` and returns the scene record.
    """
    p = spec.params
    src = _stage("sample", sample_surface, work.asset, p.sample_n, p.seed, object_id=object_id)
    gd = _stage("sample", sample_surface, guidance, p.sample_n, p.seed, object_id=object_id)
    coarse = initial_pose(src, gd, p.seed, p.registrar, object_id)
    trace = _stage(
        "optimize",
        optimize_placement,
        src,
        gd,
        UnionSdf([w.field for w in placed]),
        coarse.transform,
        p.collision,
        p.icp,
        anchor_diagonal=anchor_diagonal,
        collision_points=work.points,
        anchor_points=np.vstack([w.world_points for w in placed]),
        object_grid=work.grid,
        object_id=object_id,
    )
    work.transform = trace.transform
    reg = {
        "initial": coarse.transform.to_dict(),
        "coarse_inliers": int(coarse.inliers),
        "coarse_inlier_ratio": float(coarse.inlier_ratio),
    }
    path = str(asset_path or spec.resolve(spec.entry(object_id).asset_mesh_path))
    return PlacedObject(object_id, path, trace.transform, registration=reg, optimization=trace)


def pairwise_reports(spec: SceneSpec, ids, meshes) -> list:
    out = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            rep = intersection_report(meshes[i], meshes[j], spec.params.metric_samples, spec.params.seed)
            out.append({"a": ids[i], "b": ids[j], **rep.to_dict()})
    return out


def compose_sequential(spec: SceneSpec, strict: bool = True) -> ComposedScene:
    """Anchor first, then every other object in list order.

    Each placement collides against the union of the fields of all objects
    placed before it.  With ``strict`` a failure aborts with a StageError
    naming the object; otherwise the object is marked failed and skipped.
    """
    p = spec.params
    assets, guides = {}, {}
    for o in spec.objects:
        assets[o.id] = _load(spec, o.asset_mesh_path, o.id)
        guides[o.id] = _load(spec, o.guidance_mesh_path, o.id)
    anchor = select_anchor(spec, guides)

    res = global_to_local_align(assets[anchor], guides[anchor], p.sample_n, p.seed, p.icp, p.registrar, object_id=anchor)
    anchor_obj = PlacedObject(anchor, str(spec.resolve(spec.entry(anchor).asset_mesh_path)), res.transform, registration=res.to_dict())
    work = _prepare(spec, assets[anchor], anchor)
    work.transform = res.transform
    diag = work.mesh.aabb.diagonal
    placed = {anchor: work}
    results = {anchor: anchor_obj}

    for oid in (o.id for o in spec.objects if o.id != anchor):
        try:
            work = _prepare(spec, assets[oid], oid)
            results[oid] = place_object(spec, oid, work, guides[oid], list(placed.values()), diag)
        except MeshComposeError as exc:
            if strict:
                raise exc if isinstance(exc, StageError) else StageError("place", exc, oid) from exc
            log.warning("%s: placement failed: %s", oid, exc)
            results[oid] = PlacedObject(oid, str(spec.resolve(spec.entry(oid).asset_mesh_path)), None, status="failed", error=str(exc))
            continue
        placed[oid] = work

    order = [o.id for o in spec.objects]
    ok = [i for i in order if i in placed]
    return ComposedScene(
        anchor_id=anchor,
        objects=[results[i] for i in order],
        pairwise=pairwise_reports(spec, ok, [placed[i].mesh for i in ok]),
        seed=p.seed,
        epsilon=p.collision.margin(diag),
    )


def compose_pair(spec: SceneSpec) -> ComposedScene:
    if len(spec.objects) != 2:
        raise ValueError(f"compose_pair needs exactly two objects, got {len(spec.objects)}")
    return compose_sequential(spec, strict=True)


def compose(spec: SceneSpec, strict: bool = True) -> ComposedScene:
    """Compose, then run the refinement loop when the spec enables it."""
    scene = compose_pair(spec) if len(spec.objects) == 2 else compose_sequential(spec, strict)
    if spec.refinement.enabled:
        from .refine import editor_from_settings, refinement_loop

        scene = refinement_loop(scene, spec, editor_from_settings(spec.refinement))
    return scene


def placed_meshes(scene: ComposedScene) -> dict:
    """World-space meshes of every successfully placed object, keyed by id."""
    out = {}
    for o in scene.objects:
        if o.transform is not None:
            out[o.id] = load_mesh(o.asset_mesh_path).transformed(o.transform)
    return out


def export_merged_obj(scene: ComposedScene, path) -> None:
    """One OBJ file with a group per placed object."""
    save_obj(path, groups=list(placed_meshes(scene).items()))
