"""Scene description (input) and composed scene (output), both JSON on disk.

Mesh paths are stored relative to the JSON file's directory so a scene
directory can be moved or compared byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..collision import PLACEMENT_ICP, CollisionParams, OptimizationTrace, StageRecord
from ..geometry.transform import SimilarityTransform
from ..registration.icp import IcpParams

DEFAULT_MAX_REFINEMENTS = 5


@dataclass(frozen=True)
class ObjectEntry:
    id: str
    asset_mesh_path: str
    guidance_mesh_path: str
    anchor_hint: bool = False


@dataclass(frozen=True)
class SceneParams:
    seed: int = 0
    sample_n: int = 5000
    interior_n: int = 2000  # solid samples added to the collision point set
    sdf_resolution: int = 128
    registrar: str = "ppf-ransac"
    metric_samples: int = 1_000_000
    collision: CollisionParams = field(default_factory=CollisionParams)
    # use match_from="target" for guidance with holes or occlusion
    icp: IcpParams = PLACEMENT_ICP

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("seed", "sample_n", "interior_n", "sdf_resolution", "registrar", "metric_samples")}
        d["collision"] = self.collision.to_dict()
        d["icp"] = asdict(self.icp)
        return d

    @classmethod
    def from_dict(cls, d) -> "SceneParams":
        d = dict(d)
        col = CollisionParams.from_dict(d.pop("collision", {}))
        icp = IcpParams(**d.pop("icp", {}))
        return cls(collision=col, icp=icp, **d)


@dataclass(frozen=True)
class RefinementSettings:
    enabled: bool = False
    max_iterations: int = DEFAULT_MAX_REFINEMENTS
    trigger_threshold: float | None = None  # None: the collision margin epsilon
    editor: str | None = None  # command for the subprocess editor; None uses the mock
    timeout: float = 300.0


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple
    params: SceneParams = field(default_factory=SceneParams)
    refinement: RefinementSettings = field(default_factory=RefinementSettings)
    base_dir: str = "."

    def __post_init__(self):
        objs = tuple(o if isinstance(o, ObjectEntry) else ObjectEntry(**o) for o in self.objects)
        object.__setattr__(self, "objects", objs)
        if len(objs) < 2:
            raise ValueError("a scene needs at least two objects")
        ids = [o.id for o in objs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"object ids must be unique: {ids}")
        if sum(o.anchor_hint for o in objs) > 1:
            raise ValueError("at most one object may carry anchor_hint")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def entry(self, obj_id) -> ObjectEntry:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    def with_params(self, **overrides) -> "SceneSpec":
        return replace(self, params=replace(self.params, **overrides))

    def to_dict(self) -> dict:
        return {
            "objects": [asdict(o) for o in self.objects],
            "params": self.params.to_dict(),
            "refinement": asdict(self.refinement),
        }

    @classmethod
    def from_dict(cls, d, base_dir=".") -> "SceneSpec":
        return cls(
            objects=tuple(ObjectEntry(**o) for o in d["objects"]),
            params=SceneParams.from_dict(d.get("params", {})),
            refinement=RefinementSettings(**d.get("refinement", {})),
            base_dir=str(base_dir),
        )

    def save(self, path) -> None:
        _write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=Path(path).parent)


@dataclass
class PlacedObject:
    id: str
    asset_mesh_path: str
    transform: SimilarityTransform | None
    status: str = "ok"  # "ok" or "failed"
    error: str | None = None
    registration: dict | None = None
    optimization: OptimizationTrace | None = None
    edits: int = 0

    def to_dict(self, rel_to=None) -> dict:
        path = self.asset_mesh_path
        if rel_to is not None:
            path = os.path.relpath(os.path.abspath(path), os.path.abspath(rel_to))
        return {
            "id": self.id,
            "asset_mesh_path": Path(path).as_posix(),
            "transform": None if self.transform is None else self.transform.to_dict(),
            "status": self.status,
            "error": self.error,
            "registration": self.registration,
            "optimization": None if self.optimization is None else self.optimization.to_dict(),
            "edits": self.edits,
        }


@dataclass
class ComposedScene:
    anchor_id: str
    objects: list
    pairwise: list = field(default_factory=list)  # dicts: {"a", "b", **IntersectionReport}
    seed: int = 0
    epsilon: float = 0.0
    editor_calls: int = 0
    history: list = field(default_factory=list)  # one dict per applied edit

    def get(self, obj_id) -> PlacedObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    @property
    def transforms(self) -> dict:
        return {o.id: o.transform for o in self.objects if o.transform is not None}

    def max_penetration(self) -> float:
        return max((p["max_penetration_depth"] for p in self.pairwise), default=0.0)

    def to_dict(self, rel_to=None) -> dict:
        return {
            "anchor": self.anchor_id,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "editor_calls": self.editor_calls,
            "refinement_history": self.history,
            "objects": [o.to_dict(rel_to) for o in self.objects],
            "pairwise": self.pairwise,
        }

    def save(self, path) -> None:
        _write_json(path, self.to_dict(rel_to=Path(path).parent))

    @classmethod
    def load(cls, path) -> "ComposedScene":
        with open(path) as fh:
            d = json.load(fh)
        base = Path(path).parent
        objs = []
        for o in d["objects"]:
            opt = None
            if o.get("optimization"):
                od = o["optimization"]
                opt = OptimizationTrace(
                    transform=SimilarityTransform.from_dict(od["transform"]) if od.get("transform") else None,
                    converged=od["converged"],
                    epsilon=od["epsilon"],
                    restarts=od.get("restarts", 0),
                    records=[StageRecord(**r) for r in od.get("stages", [])],
                )
            objs.append(
                PlacedObject(
                    id=o["id"],
                    asset_mesh_path=str(base / o["asset_mesh_path"]),
                    transform=SimilarityTransform.from_dict(o["transform"]) if o["transform"] else None,
                    status=o["status"],
                    error=o["error"],
                    registration=o["registration"],
                    optimization=opt,
                    edits=o.get("edits", 0),
                )
            )
        return cls(d["anchor"], objs, d["pairwise"], d["seed"], d["epsilon"], d.get("editor_calls", 0), d.get("refinement_history", []))


def _write_json(path, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
