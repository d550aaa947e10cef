"""Command line entry point: ``meshcompose <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .errors import MeshComposeError


def _print_json(data) -> None:
    json.dump(data, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _override(spec, args):
    p = spec.params
    col = p.collision
    col_over = {k: v for k, v in (("epsilon", args.epsilon), ("beta_max", args.beta_max), ("k_max", args.k_max), ("lam", args.lam)) if v is not None}
    if col_over:
        col = dataclasses.replace(col, **col_over)
    over = {"collision": col}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.resolution is not None:
        over["sdf_resolution"] = args.resolution
    if args.metric_samples is not None:
        over["metric_samples"] = args.metric_samples
    spec = spec.with_params(**over)
    if args.refine or args.editor is not None:
        ref = dataclasses.replace(spec.refinement, enabled=True, editor=args.editor or spec.refinement.editor)
        spec = dataclasses.replace(spec, refinement=ref)
    return spec


def cmd_register(args):
    from .geometry.io import load_mesh
    from .registration import global_to_local_align

    res = global_to_local_align(load_mesh(args.source), load_mesh(args.guidance), args.sample_n, args.seed or 0, registrar=args.registrar)
    _print_json(res.to_dict())


def cmd_bake_sdf(args):
    from .geometry.io import load_mesh
    from .sdf import DEFAULT_RESOLUTION, bake_sdf, save_sdf

    grid = bake_sdf(load_mesh(args.mesh), args.resolution or DEFAULT_RESOLUTION, args.padding)
    save_sdf(args.output, grid)


def cmd_compose(args):
    from .pipeline.compose import compose, export_merged_obj
    from .pipeline.scene import SceneSpec

    spec = _override(SceneSpec.load(args.scene), args)
    scene = compose(spec, strict=not args.lenient)
    scene.save(args.output)
    if args.export_obj:
        export_merged_obj(scene, args.export_obj)


def cmd_metrics(args):
    from .geometry.io import load_mesh
    from .metrics import intersection_report

    n = args.n
    if args.against_scene:
        from .pipeline.compose import placed_meshes
        from .pipeline.scene import ComposedScene

        meshes = placed_meshes(ComposedScene.load(args.against_scene))
        ids = list(meshes)
        out = []
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                rep = intersection_report(meshes[ids[i]], meshes[ids[j]], n, args.seed)
                out.append({"a": ids[i], "b": ids[j], **rep.to_dict()})
        _print_json(out)
        return
    if len(args.meshes) != 2:
        raise SystemExit("metrics needs two mesh paths, or --against-scene")
    _print_json(intersection_report(load_mesh(args.meshes[0]), load_mesh(args.meshes[1]), n, args.seed).to_dict())


def cmd_gen_synthetic(args):
    from .pipeline.synthetic import generate_synthetic_case

    path, truth = generate_synthetic_case(args.kind, args.seed, args.output)
    print(path)


def build_parser() -> argparse.ArgumentParser:
    from .metrics import DEFAULT_SAMPLES
    from .pipeline.synthetic import KINDS

    ap = argparse.ArgumentParser(prog="meshcompose", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="align a source mesh to a guidance mesh")
    r.add_argument("source")
    r.add_argument("guidance")
    r.add_argument("--sample-n", type=int, default=5000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--registrar", default="ppf-ransac", help="'ppf-ransac' or 'external:<command>'")
    r.set_defaults(func=cmd_register)

    b = sub.add_parser("bake-sdf", help="bake a signed distance grid")
    b.add_argument("mesh")
    b.add_argument("-o", "--output", required=True)
    b.add_argument("--resolution", type=int)
    b.add_argument("--padding", type=float, default=0.2)
    b.set_defaults(func=cmd_bake_sdf)

    c = sub.add_parser("compose", help="compose the objects of a scene description")
    c.add_argument("scene")
    c.add_argument("-o", "--output", required=True, help="composed scene JSON")
    c.add_argument("--seed", type=int)
    c.add_argument("--resolution", type=int)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--beta-max", type=float)
    c.add_argument("--k-max", type=int)
    c.add_argument("--lambda", dest="lam", type=float)
    c.add_argument("--metric-samples", type=int)
    c.add_argument("--refine", action="store_true", help="run the refinement loop")
    c.add_argument("--editor", help="external editor command (implies --refine)")
    c.add_argument("--lenient", action="store_true", help="mark failed objects instead of aborting")
    c.add_argument("--export-obj", help="also write a merged OBJ with one group per object")
    c.set_defaults(func=cmd_compose)

    m = sub.add_parser("metrics", help="intersection ratios and penetration depth")
    m.add_argument("meshes", nargs="*")
    m.add_argument("--n", type=int, default=DEFAULT_SAMPLES)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--against-scene", help="report every pair of a composed scene JSON")
    m.set_defaults(func=cmd_metrics)

    g = sub.add_parser("gen-synthetic", help="write a synthetic benchmark case")
    g.add_argument("--kind", choices=KINDS, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen_synthetic)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MeshComposeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
