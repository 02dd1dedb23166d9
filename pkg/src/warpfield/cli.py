"""Command-line interface: deform, edit, morph, metrics, render.

Exit codes: 0 success, 2 invalid arguments, 3 mesh errors, 4 numerical
abort, 5 guidance transport failure.  Every command taking a seed is
bit-reproducible; deform/edit write a manifest recording config, input
hashes, and output hashes so runs can be replayed and verified.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import field as field_mod
from . import metrics as metrics_mod
from . import optimizer as opt
from .errors import (
    GuidanceTransportError,
    MeshError,
    NotSpdError,
    NumericalAbortError,
    WarpfieldError,
)
from .guidance_client import HttpGuidance
from .mesh import load_landmarks, load_obj, load_region_labels, save_obj
from .objectives import (
    RegionScaleGuidance,
    TargetLandmarksGuidance,
    TargetSilhouetteGuidance,
)
from .raster import (
    Camera,
    load_opacity,
    render_diagnostic,
    render_opacity,
    save_opacity,
    write_png,
)

GUIDANCE_URL_ENV = "WARPFIELD_GUIDANCE_URL"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class _UsageError(Exception):
    pass


def _load_mesh(args):
    landmarks = load_landmarks(args.landmarks) if getattr(args, "landmarks", None) else None
    regions = load_region_labels(args.regions) if getattr(args, "regions", None) else None
    return load_obj(args.mesh, landmarks=landmarks, region_labels=regions)


def _build_config(args):
    if getattr(args, "config", None):
        config = opt.load_config_file(args.config)
    else:
        config = opt.OptimConfig()
    flat = opt.config_to_flat(config)
    overrides = {
        "iterations": args.iterations,
        "seed": args.seed,
        "lr_jacobian": args.lr_jacobian,
        "lr_weight": args.lr_weight,
        "width": args.width,
        "height": args.height,
        "sigma_px": args.sigma,
        "symmetry": args.symmetry,
        "prompt": args.prompt,
    }
    for key, value in overrides.items():
        if value is not None:
            flat[key] = value
    return opt.config_from_flat(flat)


def _build_guidance(args, config, mesh):
    chosen = [
        args.guidance_landmarks is not None,
        args.guidance_silhouette is not None,
        args.guidance_region is not None,
        args.guidance_url is not None,
    ]
    url_from_env = os.environ.get(GUIDANCE_URL_ENV)
    if sum(chosen) == 0 and url_from_env is None:
        raise _UsageError(
            "one of --guidance-landmarks/--guidance-silhouette/"
            "--guidance-region/--guidance-url is required"
        )
    if sum(chosen) > 1:
        raise _UsageError("choose exactly one guidance source")

    if args.guidance_landmarks:
        targets = []
        with open(args.guidance_landmarks, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                tokens = line.split()
                if len(tokens) != 4:
                    raise _UsageError(
                        f"bad target line {line!r} (expected: index x y z)"
                    )
                targets.append((int(tokens[0]), [float(t) for t in tokens[1:]]))
        return TargetLandmarksGuidance(targets)

    if args.guidance_silhouette:
        base_dir = os.path.dirname(os.path.abspath(args.guidance_silhouette))
        with open(args.guidance_silhouette, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
        views = []
        for view in spec.get("views", []):
            camera = Camera.orbit(
                target=tuple(mesh.centroid),
                azimuth_deg=float(view["azimuth"]),
                elevation_deg=float(view.get("elevation", 0.0)),
                distance=float(view["distance"]),
                fov_deg=config.fov_deg,
                width=config.width,
                height=config.height,
                near=config.near,
                far=config.far,
            )
            target_path = view["target"]
            if not os.path.isabs(target_path):
                target_path = os.path.join(base_dir, target_path)
            target = load_opacity(target_path)
            if (target.height, target.width) != (config.height, config.width):
                raise _UsageError(
                    f"target {target_path} is {target.width}x{target.height}, "
                    f"config renders {config.width}x{config.height}"
                )
            views.append((camera, target))
        if not views:
            raise _UsageError("silhouette guidance file lists no views")
        return TargetSilhouetteGuidance(views)

    if args.guidance_region:
        token = args.guidance_region
        if ":" not in token:
            raise _UsageError("--guidance-region expects LABEL:SCALE")
        label, _, scale = token.partition(":")
        return RegionScaleGuidance(int(label), float(scale))

    url = args.guidance_url or url_from_env
    return HttpGuidance(url, prompt=config.prompt)


def _diagnostic_camera(config, mesh):
    distance = 0.5 * (config.distance_range[0] + config.distance_range[1])
    return Camera.orbit(
        target=tuple(mesh.centroid),
        azimuth_deg=0.0,
        elevation_deg=0.0,
        distance=distance,
        fov_deg=config.fov_deg,
        width=config.width,
        height=config.height,
        near=config.near,
        far=config.far,
    )


def _run_deformation(args, face_mask=None):
    mesh = _load_mesh(args)
    config = _build_config(args)
    guidance = _build_guidance(args, config, mesh)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    render_cam = _diagnostic_camera(config, mesh)

    def render_snapshots(state, system):
        it = state.iteration
        if config.render_interval <= 0 or it % config.render_interval:
            return
        vertices = system.forward_solve(state.field)
        write_png(
            render_diagnostic(vertices, mesh.faces, render_cam, mode="normals"),
            os.path.join(out_dir, f"normals_{it:06d}.png"),
        )
        write_png(
            render_diagnostic(
                vertices, mesh.faces, render_cam, mode="weight",
                per_face_scalar=state.field.weights,
            ),
            os.path.join(out_dir, f"weights_{it:06d}.png"),
        )

    started = time.time()
    deformed, final_field, history = opt.run(
        mesh, guidance, config,
        out_dir=out_dir,
        resume=getattr(args, "resume", None),
        face_mask=face_mask,
        step_callback=render_snapshots,
    )
    elapsed = time.time() - started

    obj_path = os.path.join(out_dir, "deformed.obj")
    field_path = os.path.join(out_dir, "field.wjf")
    save_obj(deformed, obj_path)
    field_mod.save_field(final_field, field_path)
    opt.save_config_file(config, os.path.join(out_dir, "config.cfg"))
    write_png(
        render_diagnostic(deformed.vertices, mesh.faces, render_cam, mode="normals"),
        os.path.join(out_dir, "normals_final.png"),
    )
    write_png(
        render_diagnostic(
            deformed.vertices, mesh.faces, render_cam, mode="weight",
            per_face_scalar=final_field.weights,
        ),
        os.path.join(out_dir, "weights_final.png"),
    )

    inputs = {args.mesh: _sha256(args.mesh)}
    for attr in ("landmarks", "regions", "config"):
        path = getattr(args, attr, None)
        if path:
            inputs[path] = _sha256(path)
    outputs = {
        name: _sha256(os.path.join(out_dir, name))
        for name in ("deformed.obj", "field.wjf", "loss_history.csv")
    }
    final = history[-1] if history else (0.0, 0.0, 0.0, 0.0)
    manifest = {
        "command": sys.argv[1:] if sys.argv else [],
        "config": {k: str(v) for k, v in opt.config_to_flat(config).items()},
        "inputs": inputs,
        "outputs": outputs,
        "iterations_run": len(history),
        "timing_seconds": elapsed,
        "final_losses": {
            "guidance": final[0], "lmk": final[1], "op": final[2], "total": final[3],
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return 0


def cmd_deform(args):
    return _run_deformation(args, face_mask=None)


def cmd_edit(args):
    if (args.region is None) == (args.mask is None):
        raise _UsageError("edit requires exactly one of --region or --mask")
    mesh = _load_mesh(args)
    if args.region is not None:
        if mesh.region_labels is None:
            raise _UsageError("--region needs a --regions sidecar file")
        in_region = mesh.region_labels == args.region
        face_mask = in_region[mesh.faces].any(axis=1)
    else:
        with open(args.mask, "r", encoding="utf-8") as fh:
            flags = [int(line.strip()) for line in fh if line.strip()]
        face_mask = np.asarray(flags, dtype=bool)
        if face_mask.shape != (mesh.n_faces,):
            raise _UsageError(
                f"mask file has {face_mask.shape[0]} entries, mesh has "
                f"{mesh.n_faces} faces"
            )
    if not face_mask.any():
        raise _UsageError("edit region covers 0 faces")
    return _run_deformation(args, face_mask=face_mask)


def cmd_morph(args):
    mesh = _load_mesh(args)
    field_a = field_mod.load_field(args.field_a)
    field_b = field_mod.load_field(args.field_b)
    if field_a.n_faces != mesh.n_faces or field_b.n_faces != mesh.n_faces:
        raise MeshError(
            f"field face counts ({field_a.n_faces}, {field_b.n_faces}) do not "
            f"match mesh ({mesh.n_faces})"
        )
    if args.steps < 2:
        raise _UsageError("--steps must be >= 2")
    from .poisson import assemble

    os.makedirs(args.out, exist_ok=True)
    system = assemble(mesh)
    for i in range(args.steps):
        t = i / (args.steps - 1)
        fld = field_mod.interpolate(field_a, field_b, t)
        frame = mesh.with_vertices(system.forward_solve(fld))
        save_obj(frame, os.path.join(args.out, f"morph_{i:03d}.obj"))
    return 0


def cmd_metrics(args):
    mesh = _load_mesh(args)
    mode = "brute" if args.brute else "bvh"
    report = metrics_mod.quality_report(mesh, mode=mode)
    text = metrics_mod.report_to_json(report, mesh_name=mesh.name, mode=mode)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_render(args):
    mesh = _load_mesh(args)
    camera = Camera.orbit(
        target=tuple(mesh.centroid),
        azimuth_deg=args.azimuth,
        elevation_deg=args.elevation,
        distance=args.distance,
        fov_deg=args.fov,
        width=args.width,
        height=args.height,
    )
    if args.mode == "opacity":
        opacity = render_opacity(mesh.vertices, mesh.faces, camera, args.sigma)
        save_opacity(opacity, args.out)
        return 0
    scalar = None
    if args.mode == "weight":
        if not args.field:
            raise _UsageError("--mode weight requires --field")
        scalar = field_mod.load_field(args.field).weights
        if scalar.shape[0] != mesh.n_faces:
            raise MeshError("field face count does not match mesh")
    image = render_diagnostic(
        mesh.vertices, mesh.faces, camera, mode=args.mode, per_face_scalar=scalar
    )
    write_png(image, args.out)
    return 0


def _add_common_mesh_args(parser):
    parser.add_argument("--mesh", required=True, help="input OBJ file")
    parser.add_argument("--landmarks", help="landmark sidecar (one index per line)")
    parser.add_argument("--regions", help="region sidecar (one label per vertex)")


def _add_deform_args(parser):
    _add_common_mesh_args(parser)
    parser.add_argument("--config", help="run config file (key = value)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--guidance-landmarks", help="target file: index x y z per line")
    parser.add_argument("--guidance-silhouette", help="JSON view/target manifest")
    parser.add_argument("--guidance-region", help="LABEL:SCALE region-scale goal")
    parser.add_argument("--guidance-url",
                        help=f"guidance server URL (default ${GUIDANCE_URL_ENV})")
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--lr-jacobian", dest="lr_jacobian", type=float)
    parser.add_argument("--lr-weight", dest="lr_weight", type=float)
    parser.add_argument("--width", type=int)
    parser.add_argument("--height", type=int)
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--symmetry", choices=["on", "off"])
    parser.add_argument("--prompt", help="text prompt forwarded to guidance")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="warpfield",
        description="Gradient-domain mesh deformation with weighted Jacobians",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("deform", help="optimize a deformation for a mesh")
    _add_deform_args(p)
    p.set_defaults(func=cmd_deform, resume=None)

    p = sub.add_parser("edit", help="optimize only a masked region")
    _add_deform_args(p)
    p.add_argument("--region", type=int, help="region label to edit")
    p.add_argument("--mask", help="face mask file (one 0/1 per face)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("morph", help="interpolate between two fields")
    _add_common_mesh_args(p)
    p.add_argument("--field-a", required=True)
    p.add_argument("--field-b", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_morph)

    p = sub.add_parser("metrics", help="mesh quality report (JSON)")
    _add_common_mesh_args(p)
    p.add_argument("--brute", action="store_true", help="O(m^2) candidate pairs")
    p.add_argument("--out", help="write the JSON report here too")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("render", help="diagnostic render or opacity dump")
    _add_common_mesh_args(p)
    p.add_argument("--mode", required=True,
                   choices=["normals", "flat", "weight", "opacity"])
    p.add_argument("--field", help="field file for weight mode")
    p.add_argument("--out", required=True)
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--distance", type=float, default=3.0)
    p.add_argument("--fov", type=float, default=40.0)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--sigma", type=float, default=2.0)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MeshError, OSError) as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return 3
    except (NumericalAbortError, NotSpdError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 4
    except GuidanceTransportError as exc:
        print(f"guidance failure: {exc}", file=sys.stderr)
        return 5
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WarpfieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
