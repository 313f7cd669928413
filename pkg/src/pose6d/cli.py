"""``pose6d`` command line.

Exit codes: 0 success, 1 invalid input (bad flags, missing files, schema or
validation errors), 2 runtime failure (divergence, failed gradient checks).
Every non-zero exit prints a one-line diagnostic on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io_formats as iof
from .errors import DivergenceError, FormatError, Pose6DError, ValidationError

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
METRICS = ("add", "adds", "auc", "add01d")
REPORT_COLUMNS = ("kind", "name", "class_id", "symmetric", "diameter", "add", "adds", "distance", "value")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class CheckFailure(Pose6DError):
    pass


def _fmt(x) -> str:
    return repr(float(x)) if math.isfinite(x) else ("inf" if x > 0 else "-inf")


# -- keypoints -----------------------------------------------------------------------

def cmd_keypoints_select(args):
    from .keypoints import fps_keypoint_model, sift_fps_select

    cloud = iof.read_ply(iof.read_bytes(args.mesh))
    oid = args.object_id or Path(args.mesh).stem
    if args.n < 1:
        raise ValidationError("--n must be >= 1")
    if args.algo == "fps":
        if args.n > len(cloud):
            raise ValidationError(f"cannot select {args.n} keypoints from {len(cloud)} points")
        seed = args.seed if args.random_start else None
        model = fps_keypoint_model(oid, cloud.points, args.n, seed=seed)
    else:
        if cloud.colors is None:
            raise ValidationError("sift-fps needs a colored model (red/green/blue vertex properties)")
        model = sift_fps_select(cloud, args.n, views=args.views, object_id=oid, seed=args.seed)
    iof.write_text(args.output, iof.write_keypoint_model_json(model))
    return {"keypoints": model.keypoints.tolist(), "output": str(args.output)}


# -- synth ---------------------------------------------------------------------------

def _load_spec(path):
    from .synth import SceneSpec, default_spec

    if path is None:
        return default_spec()
    doc = iof.loads(iof.read_bytes(path))
    doc.pop("format_version")
    return SceneSpec.from_dict(doc)


def cmd_synth_generate(args):
    from .synth import keypoint_models_for, make_scene

    spec = _load_spec(args.spec)
    out = Path(args.out)
    names = []
    for i in range(spec.num_scenes):
        bundle = make_scene(spec, args.seed * 100003 + i)
        name = f"scene_{i:03d}"
        iof.write_scene_dir(out / name, bundle.frame, bundle.annotation, bundle.objects)
        names.append(name)
    models = keypoint_models_for(spec)
    iof.write_text(out / "keypoints.json", iof.write_keypoint_models_json(models))
    for entry in spec.catalog:
        cloud = entry.obj.sample_surface(4096, seed=0)
        iof.write_bytes(out / "models" / f"{entry.obj.object_id}.ply", iof.write_ply(cloud))
    iof.write_text(out / "spec.json", iof.dumps(spec.to_dict()))
    return {"scenes": names, "output": str(out)}


def cmd_synth_object(args):
    from .synth import blob_cube, default_spec

    if args.kind == "blob-cube":
        obj = blob_cube()
    else:
        obj = next(e.obj for e in default_spec().catalog if e.obj.object_id == args.kind)
    if args.samples < 1:
        raise ValidationError("--samples must be >= 1")
    cloud = obj.sample_surface(args.samples, seed=args.seed)
    iof.write_bytes(args.output, iof.write_ply(cloud))
    return {"points": len(cloud), "output": str(args.output)}


# -- pose fit ------------------------------------------------------------------------

def _resolve_models(models: dict, objects: dict) -> dict:
    from .errors import ConfigurationError

    out = {}
    for cls, obj in objects.items():
        if cls in models:
            out[cls] = models[cls]
            continue
        match = [m for m in models.values() if m.object_id == obj.object_id]
        if not match:
            raise ConfigurationError(f"no keypoint model for class {cls} ({obj.object_id})")
        out[cls] = match[0]
    counts = {m.n_keypoints for m in out.values()}
    if len(counts) > 1:
        raise ConfigurationError(f"keypoint models disagree on the keypoint count: {sorted(counts)}")
    return out


def cmd_pose_fit(args):
    from .synth import corrupt_votes
    from .voting import detect_and_fit, ground_truth_votes

    if args.noise_sigma < 0:
        raise ValidationError("--noise-sigma must be >= 0")
    models = iof.read_keypoint_models_json(iof.read_bytes(args.keypoints))
    results = {}
    for i, d in enumerate(iof.scene_dirs(args.scene)):
        frame, ann, objects = iof.read_scene_dir(d)
        scene_models = _resolve_models(models, objects)
        n = None if args.points <= 0 else args.points
        votes = ground_truth_votes(frame, ann, scene_models, n, args.seed + i)
        if args.noise_sigma or args.outliers:
            votes = corrupt_votes(votes, args.noise_sigma, args.outliers, args.seed + i)
        results[d.name] = detect_and_fit(votes, scene_models, weight_by_support=args.weight_by_support)
    iof.write_text(args.output, iof.write_scene_detections_json(results))
    return {"scenes": {k: len(v) for k, v in results.items()}, "output": str(args.output)}


# -- eval ----------------------------------------------------------------------------

def _parse_metrics(text):
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METRICS]
    if bad or not names:
        raise ValidationError(f"unknown metric(s) {bad}; choose from {','.join(METRICS)}")
    return names


def evaluate(pred: dict, gt_dirs: list):
    """Match predictions to ground truth per scene and class (closest ADD(S) first)."""
    from .keypoints import model_diameter
    from .metrics import add, add_s

    gt_names = {d.name for d in gt_dirs}
    extra = sorted(set(pred) - gt_names)
    if extra:
        raise ValidationError(f"predictions name unknown scene(s) {extra}")
    rows = []
    cache = {}
    for d in gt_dirs:
        _, ann, objects = iof.read_scene_dir(d)
        dets = list(pred.get(d.name, []))
        gt_classes = {i.class_id for i in ann.instances}
        wrong = sorted({det.class_id for det in dets} - gt_classes)
        if wrong:
            raise ValidationError(f"{d.name}: predicted class id(s) {wrong} do not occur in the ground truth")
        used = set()
        for inst in ann.instances:
            obj = objects.get(inst.class_id)
            if obj is None:
                raise ValidationError(f"{d.name}: no object definition for class {inst.class_id}")
            if obj.object_id not in cache:
                pts = obj.sample_surface(2000, seed=0).points
                cache[obj.object_id] = (pts, model_diameter(pts))
            pts, diameter = cache[obj.object_id]
            best = None
            for j, det in enumerate(dets):
                if j in used or det.class_id != inst.class_id or det.pose is None:
                    continue
                a, s = add(pts, det.pose, inst.pose), add_s(pts, det.pose, inst.pose)
                dist = s if inst.symmetric else a
                if best is None or dist < best[0]:
                    best = (dist, j, a, s)
            if best is None:
                rows.append((f"{d.name}/{inst.instance_id}", inst.class_id, inst.symmetric, diameter,
                             math.inf, math.inf, math.inf))
            else:
                used.add(best[1])
                rows.append((f"{d.name}/{inst.instance_id}", inst.class_id, inst.symmetric, diameter,
                             best[2], best[3], best[0]))
    return rows


def cmd_eval(args):
    from .metrics import EvalRecord, add_01d, add_auc

    metrics = _parse_metrics(args.metrics)
    pred = iof.read_scene_detections_json(iof.read_bytes(args.pred))
    rows = evaluate(pred, iof.scene_dirs(args.gt))
    if not rows:
        raise ValidationError("ground truth holds no instances")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for name, cls, sym, diam, a, s, dist in rows:
        w.writerow(["instance", name, cls, int(sym), _fmt(diam),
                    _fmt(a) if "add" in metrics else "", _fmt(s) if "adds" in metrics else "",
                    _fmt(dist), ""])
    summary = {}
    dists = [r[6] for r in rows]
    if "add" in metrics:
        summary["mean_add"] = float(np.mean([r[4] for r in rows]))
    if "adds" in metrics:
        summary["mean_adds"] = float(np.mean([r[5] for r in rows]))
    if "auc" in metrics:
        summary["auc"] = add_auc(dists)
    if "add01d" in metrics:
        summary["add01d"] = add_01d(EvalRecord(r[0], bool(r[2]), r[6], r[3]) for r in rows)
    for k, v in summary.items():
        w.writerow(["summary", k, "", "", "", "", "", "", _fmt(v)])
    iof.write_text(args.output, buf.getvalue())
    return {"instances": len(rows), "summary": summary, "output": str(args.output)}


# -- gradcheck / training ------------------------------------------------------------------

def cmd_gradcheck(args):
    from .fusion.gradcheck import run_suite

    seeds = (args.seed,) if args.seed is not None else (0, 1, 2, 3, 4)
    results = run_suite(seeds)
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name}: rel. err {r.max_rel_error:.3e} (< {r.tolerance:g})")
    per_op = max(r.max_rel_error for r in results if not r.name.startswith("forward"))
    e2e = max(r.max_rel_error for r in results if r.name.startswith("forward"))
    print(f"max rel. err per-op {per_op:.3e}, end-to-end {e2e:.3e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailure(f"{len(failed)} gradient check(s) failed: {', '.join(failed[:5])}")
    return {"per_op": per_op, "end_to_end": e2e, "checks": len(results)}


def cmd_train_toy(args):
    from .fusion.network import FusionConfig
    from .fusion.train import tiny_scenes, train_toy

    cfg = FusionConfig() if args.config is None else iof.read_fusion_config_json(iof.read_bytes(args.config))
    if args.steps < 0:
        raise ValidationError("--steps must be >= 0")
    if args.scenes < 1:
        raise ValidationError("--scenes must be >= 1")
    scenes = tiny_scenes(args.scenes, args.seed, n_keypoints=cfg.n_keypoints)
    result = train_toy(scenes, cfg, args.steps, args.lr, seed=args.seed)
    lines = ["step,loss"] + [f"{i},{_fmt(v)}" for i, v in enumerate(result.trace)]
    iof.write_text(args.output, "\n".join(lines) + "\n")
    if args.params_out:
        iof.write_text(args.params_out, iof.write_parameters_json(result.params))
    return {"initial_loss": result.trace[0], "final_loss": result.trace[-1], "output": str(args.output)}


def read_report_distances(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != REPORT_COLUMNS:
        raise FormatError("not an eval report (unexpected header)")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(REPORT_COLUMNS):
            raise FormatError("wrong column count", i)
        if row[0] == "instance":
            try:
                d = float(row[7])
            except ValueError:
                raise FormatError(f"bad distance {row[7]!r}", i) from None
            if not d >= 0:
                raise FormatError("distances must be non-negative", i)
            out.append(d)
    if not out:
        raise FormatError("report holds no instance rows")
    return out


def cmd_plot(args):
    from .plot import accuracy_curve_svg

    try:
        text = iof.read_bytes(args.input).decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("report is not UTF-8 text") from None
    dists = read_report_distances(text)
    iof.write_text(args.output, accuracy_curve_svg(dists, title=args.title or ""))
    return {"instances": len(dists), "output": str(args.output)}


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pose6d", description="Keypoint-voting 6D pose toolkit.")
    p.add_argument("--json", action="store_true", help="print a JSON result record on stdout")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    kp = sub.add_parser("keypoints", help="keypoint selection").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    sel = kp.add_parser("select", help="select object keypoints from a PLY model")
    sel.add_argument("--mesh", required=True, help="ASCII PLY model (vertices, optional colors)")
    sel.add_argument("--algo", choices=("fps", "sift-fps"), default="sift-fps")
    sel.add_argument("--n", type=int, default=8, help="number of keypoints (e.g. 4, 8, 12)")
    sel.add_argument("--views", type=int, default=60, help="rendered viewpoints for sift-fps")
    sel.add_argument("--seed", type=int, default=None,
                     help="sift-fps: rotation of the viewpoint lattice; fps: start point with --random-start")
    sel.add_argument("--random-start", action="store_true", help="fps: start from a seeded random point")
    sel.add_argument("--object-id", default=None, help="defaults to the file stem")
    sel.add_argument("-o", "--output", required=True, help="KeypointModel JSON")
    sel.set_defaults(func=cmd_keypoints_select)

    syn = sub.add_parser("synth", help="synthetic data").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    gen = syn.add_parser("generate", help="render annotated scenes")
    gen.add_argument("--spec", default=None, help="scene spec JSON (default: built-in three-object catalog)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=cmd_synth_generate)
    obj = syn.add_parser("object", help="export a textured model as a colored PLY point cloud")
    obj.add_argument("--kind", choices=("blob-cube", "box", "bracket", "can"), default="blob-cube")
    obj.add_argument("--samples", type=int, default=60000)
    obj.add_argument("--seed", type=int, default=0)
    obj.add_argument("-o", "--output", required=True)
    obj.set_defaults(func=cmd_synth_object)

    pose = sub.add_parser("pose", help="pose estimation").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    fit = pose.add_parser("fit", help="vote, cluster and fit poses from ground-truth vote fields")
    fit.add_argument("--scene", required=True, help="scene directory or generated set")
    fit.add_argument("--keypoints", required=True, help="keypoint model JSON")
    fit.add_argument("--noise-sigma", type=float, default=0.0, help="Gaussian vote noise in meters")
    fit.add_argument("--outliers", type=float, default=0.0, help="fraction of points with random votes")
    fit.add_argument("--weight-by-support", action="store_true",
                     help="weight each keypoint in the fit by the votes in its mode")
    fit.add_argument("--points", type=int, default=2048, help="sampled points per scene (0 = all)")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("-o", "--output", required=True, help="poses JSON")
    fit.set_defaults(func=cmd_pose_fit)

    ev = sub.add_parser("eval", help="score poses against ground truth")
    ev.add_argument("--pred", required=True, help="poses JSON from 'pose fit'")
    ev.add_argument("--gt", required=True, help="scene directory or generated set")
    ev.add_argument("--metrics", default="add,adds,auc,add01d", help="comma list of add,adds,auc,add01d")
    ev.add_argument("-o", "--output", required=True, help="CSV report")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    gc.add_argument("--seed", type=int, default=None, help="single seed (default: seeds 0-4)")
    gc.set_defaults(func=cmd_gradcheck)

    tr = sub.add_parser("train-toy", help="gradient descent on tiny synthetic scenes")
    tr.add_argument("--steps", type=int, default=200)
    tr.add_argument("--lr", type=float, default=0.05)
    tr.add_argument("--config", default=None, help="FusionConfig JSON (default config otherwise)")
    tr.add_argument("--scenes", type=int, default=4)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--params-out", default=None, help="write trained parameters JSON")
    tr.add_argument("-o", "--output", required=True, help="loss trace CSV")
    tr.set_defaults(func=cmd_train_toy)

    pl = sub.add_parser("plot", help="SVG accuracy-threshold curve from an eval report")
    pl.add_argument("--in", dest="input", required=True, help="CSV report from 'eval'")
    pl.add_argument("--curve", choices=("auc",), default="auc")
    pl.add_argument("--title", default=None)
    pl.add_argument("-o", "--output", required=True, help="SVG file")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    want_json = "--json" in (sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INPUT
    code, message, result = EXIT_OK, "ok", {}
    try:
        result = args.func(args) or {}
    except (DivergenceError, CheckFailure) as exc:
        code, message = EXIT_RUNTIME, str(exc)
    except (ValidationError, FormatError, OSError) as exc:
        code, message = EXIT_INPUT, str(exc)
    except Pose6DError as exc:
        code, message = EXIT_RUNTIME, str(exc)
    except ArithmeticError as exc:
        code, message = EXIT_RUNTIME, f"numerical failure: {exc}"
    if code:
        print(f"error: {' '.join(message.split())}", file=sys.stderr)
    if want_json:
        print(json.dumps({"command": args.command, "exit_code": code, "message": message,
                          "result": result}, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
