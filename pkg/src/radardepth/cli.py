"""Command-line interface.

Every subcommand reads and writes the standard formats (PFM depth, PLY/CSV
clouds, calibration JSON).  Errors are reported on stderr as a single JSON
object ``{"error": <category>, "message": ...}`` and mapped to exit codes:
0 ok, 2 bad input or format, 3 degenerate frame, 4 non-convergence (only
with ``--strict``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import align, augment, io, refine, synth
from .errors import (
    DegenerateInputError,
    InputError,
    NonConvergenceError,
    ParameterError,
    RadarDepthError,
    UndefinedScoreError,
)
from .geometry import DepthImage, project_points
from .metrics import TABLE_COLUMNS, compute_metrics
from .pipeline import PipelineConfig, augment_frame, run_batch, run_pipeline

logger = logging.getLogger("radardepth")


def _ranges(text):
    try:
        caps = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range list {text!r}") from None
    if not caps:
        raise argparse.ArgumentTypeError("empty range list")
    return caps


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON file with pipeline parameters")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for the synthetic scene generator")
    common.add_argument("--debug-dir", type=Path, default=argparse.SUPPRESS, help="dump intermediate maps here")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress warnings and progress output")
    common.add_argument("--strict", action="store_true", default=argparse.SUPPRESS,
                        help="treat solver non-convergence as an error (exit 4)")
    p = argparse.ArgumentParser(prog="radardepth", parents=[common],
                                description="Radar-guided metric depth from monocular depth maps.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a synthetic frame")
    s.add_argument("--spec", type=Path, help="SceneSpec JSON; a random street scene if omitted")
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=240)
    s.add_argument("--out-dir", type=Path, required=True)

    s = sub.add_parser("align", parents=[common], help="global scale alignment of a monocular depth map")
    s.add_argument("--mono", type=Path, required=True)
    s.add_argument("--cloud", type=Path, required=True)
    s.add_argument("--calib", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--report", type=Path)

    s = sub.add_parser("augment", parents=[common], help="quasi-dense radar depth")
    s.add_argument("--cloud", type=Path, required=True)
    s.add_argument("--calib", type=Path, required=True)
    s.add_argument("--guide", type=Path, required=True, help="globally aligned depth (PFM)")
    s.add_argument("--tau", type=float)
    s.add_argument("--provider", choices=("heuristic", "external"))
    s.add_argument("--conf-dir", type=Path, help="external confidence directory")
    s.add_argument("--frame-id", default="frame")
    s.add_argument("--export-conf", type=Path, help="write the confidence maps used here in the external layout")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("refine", parents=[common], help="complete the scale field and compose metric depth")
    s.add_argument("--dq", type=Path, required=True)
    s.add_argument("--dga", type=Path, required=True)
    s.add_argument("--lambda-smooth", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--max-iters", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--report", type=Path)

    s = sub.add_parser("eval", parents=[common], help="depth metrics per range cap")
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--gt", type=Path, required=True)
    s.add_argument("--ranges", type=_ranges, default=None, help="comma-separated caps in metres, e.g. 50,60,70")
    s.add_argument("--out-dir", type=Path, help="also write metrics_<cap>.json and summary.csv here")

    s = sub.add_parser("run", parents=[common], help="full pipeline on one frame or a batch manifest")
    s.add_argument("--mono", type=Path)
    s.add_argument("--cloud", type=Path)
    s.add_argument("--calib", type=Path)
    s.add_argument("--gt", type=Path)
    s.add_argument("--conf-dir", type=Path)
    s.add_argument("--frame-id", default="frame")
    s.add_argument("--out", type=Path, help="metric depth output (single frame)")
    s.add_argument("--report", type=Path)
    s.add_argument("--batch", type=Path, help="JSON manifest of frames")
    s.add_argument("--out-dir", type=Path, help="batch output directory")
    s.add_argument("--jobs", type=int, help="parallel frames in batch mode (default: all cores)")

    s = sub.add_parser("score-confidence", parents=[common], help="mean BCE of confidence maps against interpolated ground truth")
    s.add_argument("--conf-dir", type=Path, required=True)
    s.add_argument("--frame-id", default="frame")
    s.add_argument("--gt", type=Path, required=True, help="densified ground truth d_int (PFM)")
    s.add_argument("--cloud", type=Path, required=True)
    s.add_argument("--calib", type=Path, required=True)
    return p


def _load_config(args, **overrides) -> PipelineConfig:
    base = {}
    if args.config is not None:
        base = io.read_json(args.config)
        if not isinstance(base, dict):
            raise ParameterError("config must be a JSON object")
    base.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(base)


def _emit(doc, quiet=False):
    if not quiet:
        print(json.dumps(doc, sort_keys=True))


def _projected(cloud_path, calib_path, config):
    cam, extr = io.read_calibration(calib_path)
    cloud = io.read_cloud(cloud_path)
    proj = project_points(cloud, extr, cam).within_range(*config.radar_range).zbuffered()
    return cam, extr, cloud, proj


def _check_shape(img: DepthImage, cam, what):
    if img.shape != cam.shape:
        raise InputError(f"{what} is {img.width}x{img.height}, calibration says {cam.width}x{cam.height}")


def cmd_simulate(args):
    if args.spec is not None:
        spec = synth.SceneSpec.from_dict(io.read_json(args.spec))
        if args.seed is not None:
            spec = synth.with_seed(spec, args.seed)
    else:
        cam = synth.default_camera(args.width, args.height)
        spec = synth.random_scene_spec(args.seed or 0, camera=cam)
    bundle = synth.generate_scene(spec)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    io.write_depth_pfm(out / "gt.pfm", bundle.gt_depth)
    io.write_depth_pfm(out / "mono.pfm", bundle.mono_depth)
    io.write_pfm_array(out / "guide.pfm", bundle.guide_image)
    io.write_ply(out / "cloud.ply", bundle.cloud)
    io.write_calibration(out / "calib.json", bundle.camera, bundle.extrinsic)
    io.write_json(out / "scene.json", spec.to_dict())
    _emit({"out_dir": str(out), "n_points": len(bundle.cloud), "seed": spec.seed}, args.quiet)
    return 0


def cmd_align(args):
    config = _load_config(args)
    cam, _, _, proj = _projected(args.cloud, args.calib, config)
    mono = io.read_depth_pfm(args.mono)
    _check_shape(mono, cam, "mono depth")
    fit, d_ga, _ = align.align_global(mono, proj, tol=config.brent_tol, space=config.align_space,
                                      valid_range=config.radar_range)
    io.write_depth_pfm(args.out, d_ga)
    if args.report is not None:
        io.write_json(args.report, fit.to_dict())
    _emit(fit.to_dict(), args.quiet)
    return 0


def cmd_augment(args):
    config = _load_config(args, tau=args.tau, provider=args.provider)
    cam, _, cloud, proj = _projected(args.cloud, args.calib, config)
    d_ga = io.read_depth_pfm(args.guide)
    _check_shape(d_ga, cam, "guide depth")
    dq, maps = augment_frame(proj, len(cloud), d_ga, cam, config, args.conf_dir, args.frame_id)
    io.write_depth_pfm(args.out, dq)
    if args.export_conf is not None:
        augment.write_external_confidence(args.export_conf, args.frame_id, maps)
    _emit({"n_maps": len(maps), "coverage": dq.coverage()}, args.quiet)
    return 0


def cmd_refine(args):
    config = _load_config(args, lambda_smooth=args.lambda_smooth, beta=args.beta,
                          solver_max_iters=args.max_iters, solver_tol=args.tol)
    dq = io.read_depth_pfm(args.dq)
    d_ga = io.read_depth_pfm(args.dga)
    if dq.shape != d_ga.shape:
        raise ParameterError(f"d_q is {dq.width}x{dq.height} but d_ga is {d_ga.width}x{d_ga.height}")
    sq = refine.quasi_dense_scale(dq, d_ga)
    weights = refine.sobel_edge_weights(d_ga, config.beta)
    field = refine.solve_scale_field(sq, weights, config.lambda_smooth, max_iters=config.solver_max_iters,
                                     tol=config.solver_tol)
    d_hat = refine.compose_depth(field, d_ga.reciprocal())
    io.write_depth_pfm(args.out, d_hat)
    if args.debug_dir is not None:
        args.debug_dir.mkdir(parents=True, exist_ok=True)
        io.write_pfm_array(args.debug_dir / "u.pfm", field.u)
    report = field.report.to_dict()
    report["demoted"] = sq.demoted
    if args.report is not None:
        io.write_json(args.report, report)
    _emit({k: report[k] for k in ("energy", "iterations", "converged", "clamp_count")}, args.quiet)
    if args.strict and not field.report.converged:
        raise NonConvergenceError(f"solver stopped after {field.report.iterations} iterations without converging")
    return 0


def cmd_eval(args):
    config = _load_config(args)
    caps = args.ranges or list(config.range_caps)
    pred = io.read_depth_pfm(args.pred)
    gt = io.read_depth_pfm(args.gt)
    reports = [compute_metrics(pred, gt, cap) for cap in caps]
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in reports]
    header = ",".join(("range",) + TABLE_COLUMNS)
    rows = [",".join([f"{r.range_cap:g}"] + [repr(float(x)) for x in r.table_row()]) for r in reports]
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        for r in reports:
            io.write_json(args.out_dir / f"metrics_{r.range_cap:g}.json", r.to_dict())
        (args.out_dir / "summary.csv").write_text("\n".join([header] + rows) + "\n")
    if not args.quiet:
        print("\n".join(lines + [header] + rows))
    return 0


def cmd_run(args):
    config = _load_config(args)
    if args.batch is not None:
        results = run_batch(args.batch, config, out_dir=args.out_dir, jobs=args.jobs, debug_dir=args.debug_dir)
        if not args.quiet:
            for r in results:
                print(json.dumps({"frame_id": r["frame_id"], "status": r["status"]}))
        if args.strict and any(r["status"] == "ok: not-converged" for r in results):
            raise NonConvergenceError("at least one frame did not converge")
        return 0
    missing = [n for n in ("mono", "cloud", "calib", "out") if getattr(args, n) is None]
    if missing:
        raise ParameterError(f"run needs --{', --'.join(missing)} (or --batch)")
    cam, extr = io.read_calibration(args.calib)
    mono = io.read_depth_pfm(args.mono)
    cloud = io.read_cloud(args.cloud)
    gt = io.read_depth_pfm(args.gt) if args.gt is not None else None
    d_hat, result = run_pipeline(mono, cloud, cam, extr, config, gt=gt, confidence_dir=args.conf_dir,
                                 frame_id=args.frame_id, debug_dir=args.debug_dir)
    doc = result.to_dict()
    if args.report is not None:
        io.write_json(args.report, doc)
    if d_hat is None:
        _emit({"frame_id": result.frame_id, "status": result.status}, args.quiet)
        raise DegenerateInputError(f"frame {result.frame_id} {result.status}")
    io.write_depth_pfm(args.out, d_hat)
    _emit({"frame_id": result.frame_id, "status": result.status, "alignment": result.alignment,
           "metrics": result.metrics}, args.quiet)
    if args.strict and result.status == "ok: not-converged":
        raise NonConvergenceError(f"frame {result.frame_id} did not converge")
    return 0


def cmd_score_confidence(args):
    config = _load_config(args)
    cam, _, cloud, proj = _projected(args.cloud, args.calib, config)
    d_int = io.read_depth_pfm(args.gt)
    _check_shape(d_int, cam, "ground truth")
    maps, clamped = augment.load_external_confidence(args.conf_dir, args.frame_id, cam.width, cam.height)
    depths = np.full(len(cloud), np.nan)
    depths[proj.source_index] = proj.depth
    scores = []
    skipped = 0
    for cm in maps:
        if not (0 <= cm.point_index < len(cloud)) or not np.isfinite(depths[cm.point_index]):
            skipped += 1
            continue
        labels = augment.make_association_labels(d_int, cm.rect, float(depths[cm.point_index]),
                                                 point_index=cm.point_index)
        try:
            scores.append(augment.bce_score(cm, labels))
        except DegenerateInputError:
            skipped += 1
    if not scores:
        raise UndefinedScoreError("no confidence map has a labelled pixel")
    _emit({"mean_bce": float(np.mean(scores)), "n_scored": len(scores), "n_skipped": skipped,
           "n_clamped": clamped}, args.quiet)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "align": cmd_align,
    "augment": cmd_augment,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "run": cmd_run,
    "score-confidence": cmd_score_confidence,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("debug_dir", None), ("quiet", False), ("strict", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except RadarDepthError as exc:
        sys.stderr.write(json.dumps({"error": exc.category, "message": str(exc)}) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "input", "message": f"{exc.filename}: {exc.strerror}"}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
