"""Refinement loop: while objects still interpenetrate, ask an editor for a
replacement asset and re-place only that object.

An editor is any callable taking an EditorRequest and returning an
EditorResponse.  The bundled default never changes anything.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from ..errors import EditorFailureError, MeshComposeError
from ..geometry.io import load_mesh
from .compose import _load, _prepare, pairwise_reports, place_object
from .scene import ComposedScene, SceneSpec

log = logging.getLogger(__name__)

NO_CHANGE = "no-change"


@dataclass(frozen=True)
class EditorRequest:
    scene_path: str  # snapshot of the current ComposedScene
    object_id: str
    max_penetration_depth: float
    r_volume: float
    iteration: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EditorResponse:
    replacement_mesh_path: str | None = None

    @property
    def no_change(self) -> bool:
        return self.replacement_mesh_path is None

    def to_dict(self) -> dict:
        if self.no_change:
            return {"status": NO_CHANGE}
        return {"replacement_mesh_path": self.replacement_mesh_path}

    @classmethod
    def from_dict(cls, d) -> "EditorResponse":
        if not isinstance(d, dict):
            raise EditorFailureError(f"editor response must be a JSON object, got {type(d).__name__}")
        path = d.get("replacement_mesh_path")
        if path is not None:
            if not isinstance(path, str) or not path:
                raise EditorFailureError("replacement_mesh_path must be a non-empty string")
            return cls(path)
        if d.get("status") == NO_CHANGE:
            return cls(None)
        raise EditorFailureError(f"editor response has neither a replacement nor status {NO_CHANGE!r}: {d}")


class MockEditor:
    """Always answers no-change."""

    def __call__(self, request: EditorRequest) -> EditorResponse:
        return EditorResponse(None)


class SubprocessEditor:
    """Request JSON on stdin, response JSON on stdout; a nonzero exit is a failure."""

    def __init__(self, command: str, timeout: float = 300.0):
        self.command = command
        self.timeout = timeout

    def __call__(self, request: EditorRequest) -> EditorResponse:
        try:
            proc = subprocess.run(
                shlex.split(self.command),
                input=json.dumps(request.to_dict()),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EditorFailureError(f"editor failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise EditorFailureError(f"editor exited with {proc.returncode}: {proc.stderr.strip()}")
        try:
            data = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise EditorFailureError(f"editor wrote invalid JSON: {exc}") from exc
        return EditorResponse.from_dict(data)


def editor_from_settings(settings):
    if settings.editor is None:
        return MockEditor()
    return SubprocessEditor(settings.editor, settings.timeout)


def worst_offender(scene: ComposedScene):
    """The pair report with the deepest penetration and the object to edit in it.

    The anchor is never edited; between two non-anchor objects the one
    placed later is chosen.
    """
    order = [o.id for o in scene.objects]
    worst = max(scene.pairwise, key=lambda r: r["max_penetration_depth"])
    a, b = sorted((worst["a"], worst["b"]), key=order.index)
    return worst, (b if a == scene.anchor_id or order.index(b) > order.index(a) else a)


def recompose_object(scene: ComposedScene, spec: SceneSpec, object_id, asset_path) -> ComposedScene:
    """Re-run Stage 2 for one object with a new asset; every other pose is kept."""
    others = []
    for o in scene.objects:
        if o.transform is not None and o.id != object_id:
            w = _prepare(spec, load_mesh(o.asset_mesh_path), o.id)
            w.transform = o.transform
            others.append((o.id, w))
    work = _prepare(spec, load_mesh(asset_path), object_id)
    guidance = _load(spec, spec.entry(object_id).guidance_mesh_path, object_id)
    diag = dict(others)[scene.anchor_id].mesh.aabb.diagonal
    new = place_object(spec, object_id, work, guidance, [w for _, w in others], diag, asset_path=str(asset_path))
    new.edits = scene.get(object_id).edits + 1
    objects = [new if o.id == object_id else o for o in scene.objects]
    meshes = {oid: w.mesh for oid, w in others}
    meshes[object_id] = work.mesh
    ids = [o.id for o in objects if o.id in meshes]
    pairwise = pairwise_reports(spec, ids, [meshes[i] for i in ids])
    return replace(scene, objects=objects, pairwise=pairwise)


def refinement_loop(scene: ComposedScene, spec: SceneSpec, editor=None, workdir=None) -> ComposedScene:
    """Ask ``editor`` for replacements until nothing penetrates deeper than the trigger.

    At most ``spec.refinement.max_iterations`` editor calls are made.  An
    editor failure ends the loop and returns the least-penetrating scene
    seen so far.
    """
    settings = spec.refinement
    editor = editor if editor is not None else MockEditor()
    threshold = settings.trigger_threshold if settings.trigger_threshold is not None else scene.epsilon
    if not scene.pairwise or scene.max_penetration() <= threshold:
        return scene
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="meshcompose-refine-")
        workdir = tmp.name
    current = best = scene
    calls = 0
    try:
        for it in range(settings.max_iterations):
            depth = current.max_penetration()
            if depth <= threshold:
                break
            worst, oid = worst_offender(current)
            snapshot = Path(workdir) / f"scene_{it}.json"
            current.save(snapshot)
            req = EditorRequest(str(snapshot), oid, float(depth), float(worst["r_volume"]), it)
            calls += 1
            try:
                resp = editor(req)
                if resp.no_change:
                    log.info("refinement: editor left %s unchanged", oid)
                    break
                try:
                    load_mesh(resp.replacement_mesh_path)
                except MeshComposeError as exc:
                    raise EditorFailureError(f"replacement mesh for {oid} is unusable: {exc}") from exc
                current = recompose_object(current, spec, oid, resp.replacement_mesh_path)
            except EditorFailureError as exc:
                log.warning("refinement aborted: %s", exc)
                current = best
                break
            current.history = current.history + [{"iteration": it, "object": oid, "depth_before": depth, "depth_after": current.max_penetration()}]
            if current.max_penetration() < best.max_penetration():
                best = current
    finally:
        if tmp is not None:
            tmp.cleanup()
    return replace(current, editor_calls=scene.editor_calls + calls)
