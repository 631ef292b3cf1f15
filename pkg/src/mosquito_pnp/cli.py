"""Command-line harness.

Every subcommand writes under one output directory, chosen by ``--output``,
then the ``MOSQUITO_PNP_OUTPUT`` environment variable, then the config's
``output_dir``. Exit status: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import controller as ctl
from .calibration import CalibrationMap, calibrate_onboard, calibrate_overhead, map_camera_to_robot
from .config import OUTPUT_ENV, PRESETS, HarnessConfig, load_config
from .errors import ConfigurationError, MosquitoPnPError
from .localizer import default_crop, locate_mosquito
from .metrics import mdph_samples, render_report, table1_csv
from .render import (load_pgm, load_png, onboard_camera, overhead_camera, render_onboard, render_overhead,
                     save_pgm, save_png)
from .scene import make_scene
from .segmentation import (OracleSegmenter, class_weights, confusion_matrix, normalize_rows, per_class_iou,
                           pixel_accuracy, postprocess, weighted_iou)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _csv_text(rows, header) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _f(v: float) -> str:
    return "nan" if v != v else f"{v:.6f}"


# ------------------------------------------------------------------ subcommands
def cmd_locate(args, cfg: HarnessConfig, out: Path) -> int:
    if args.image:
        frame = load_png(args.image)
        scene = None
    else:
        scene = make_scene(cfg.seed, cfg.layout, cfg.variability, empty=args.empty)
        frame = render_overhead(scene)
        save_png(out / "frame.png", frame)
    crop = tuple(args.crop) if args.crop else (None if args.full_frame else default_crop(cfg.layout))
    res = locate_mosquito(frame, cfg.pipeline, crop, debug_dir=out / "stages" if args.debug else None)
    report = res.to_dict()
    if scene is not None and scene.specimen is not None:
        truth = overhead_camera(cfg.layout).world_to_pixel(ctl.body_centroid(scene.specimen))
        report["truth_centroid"] = [float(v) for v in truth]
    line = json.dumps(report, sort_keys=True)
    (out / "detection.json").write_text(line + "\n")
    print(line)
    return EXIT_OK


def _generated_pairs(args, cfg: HarnessConfig, out: Path):
    """Zero-noise held-specimen views: ``(key, seed, img, truth, world_of, neck)``."""
    calib = ctl.default_calibration(cfg.layout, cfg.motion)
    for k in range(args.n):
        seed = ctl.trial_seed(cfg.seed, k)
        view = ctl.held_specimen_view(make_scene(seed, cfg.layout, cfg.variability), cfg.controller,
                                      ctl.NoiseProfile(), calib, profile=cfg.motion, seed=seed)
        if view is None:
            raise MosquitoPnPError(f"frame {k}: the zero-noise pick failed")
        scene, state = view
        img, truth = render_onboard(scene, state, foreshortening=cfg.noise.foreshortening,
                                    with_image=args.save_frames)
        if args.save_frames:
            save_png(out / f"frame_{k:04d}.png", img)
            save_pgm(out / f"frame_{k:04d}_truth.pgm", truth)
        cam = onboard_camera(cfg.layout, state.position_mm[:2])
        yield k, seed, img, truth, cam.pixel_to_world, scene.specimen.neck_midpoint


def _directory_pairs(directory: Path):
    """``<name>.png`` images with ``<name>_truth.pgm`` masks, in name order."""
    images = sorted(p for p in directory.glob("*.png"))
    if not images:
        raise ConfigurationError(f"no PNG images in {directory}")
    for k, path in enumerate(images):
        truth_path = path.with_name(path.stem + "_truth.pgm")
        if not truth_path.exists():
            raise ConfigurationError(f"missing truth mask {truth_path.name}")
        yield k, None, load_png(path), load_pgm(truth_path), None, None


def cmd_segment_eval(args, cfg: HarnessConfig, out: Path) -> int:
    seg = OracleSegmenter(shape=tuple(cfg.layout.onboard_resolution[::-1]),
                          flip_probability=cfg.noise.label_flip_probability,
                          boundary_erosion=cfg.noise.label_boundary_erosion, seed=cfg.seed)
    pairs = _directory_pairs(Path(args.pairs)) if args.pairs else _generated_pairs(args, cfg, out)
    preds, truths, rows = [], [], []
    for k, seed, img, truth, world_of, neck in pairs:
        pred = seg.segment(img, truth, frame_key=k)
        err = float("nan")
        if world_of is not None:
            try:
                pp = postprocess(pred, (cfg.controller.dilation_kernel,) * 2)
                err = float(np.hypot(*(world_of(np.array(pp.dissection_point)) - neck)))
            except MosquitoPnPError:
                pass
        preds.append(pred)
        truths.append(truth)
        iou = per_class_iou(pred, truth)
        rows.append({"frame": k, "seed": "" if seed is None else seed, "pixel_accuracy": _f(pixel_accuracy(pred, truth)),
                     **{f"iou_{c}": _f(v) for c, v in enumerate(iou)}, "dissection_error_mm": _f(err)})
    weights = class_weights(truths)
    p_all, t_all = np.concatenate([p.ravel() for p in preds]), np.concatenate([t.ravel() for t in truths])
    cm = confusion_matrix(p_all, t_all)
    errors = [float(r["dissection_error_mm"]) for r in rows]
    summary = {"n": len(rows), "pixel_accuracy": pixel_accuracy(p_all, t_all),
               "per_class_iou": [float(v) for v in per_class_iou(p_all, t_all)],
               "weighted_iou": weighted_iou(p_all, t_all, weights), "class_weights": [float(w) for w in weights],
               "confusion_matrix": cm.tolist(), "confusion_matrix_normalized": normalize_rows(cm).tolist(),
               "max_dissection_error_mm": None if all(e != e for e in errors) else float(np.nanmax(errors))}
    header = ["frame", "seed", "pixel_accuracy", "iou_0", "iou_1", "iou_2", "iou_3", "dissection_error_mm"]
    (out / "segment_eval.csv").write_text(_csv_text(rows, header))
    _dump_json(out / "segment_eval.json", _rounded(summary))
    print(f"pixel_accuracy={summary['pixel_accuracy']:.4f} w-IoU={summary['weighted_iou']:.4f}")
    return EXIT_OK


def cmd_calibrate(args, cfg: HarnessConfig, out: Path) -> int:
    occluded = tuple(args.occlude or ())
    cmap, acq, robot = calibrate_overhead(cfg.layout, cfg.motion, nx=args.nx, ny=args.ny, occluded=occluded,
                                          seed=cfg.seed)
    cmap.save(out / "calibration_map.json")
    onboard = calibrate_onboard(cfg.layout, cfg.motion)
    _dump_json(out / "onboard_scale.json", onboard.to_dict())
    rows = [{"u": _f(p[0]), "v": _f(p[1]), "x_counts": int(e[0]), "y_counts": int(e[1])}
            for p, e in zip(acq.pixels, acq.encoders)]
    (out / "acquisition.csv").write_text(_csv_text(rows, ["u", "v", "x_counts", "y_counts"]))
    (out / "telemetry.jsonl").write_text("".join(line + "\n" for line in robot.telemetry_lines()))
    print(f"samples={cmap.n_samples} failures={len(acq.failures)} residual_max={cmap.residual_max:.3f} counts")
    return EXIT_OK


def cmd_apply_map(args, cfg: HarnessConfig, out: Path) -> int:
    cmap = CalibrationMap.load(args.map)
    res = map_camera_to_robot(cmap, (args.u, args.v))
    data = {"pixel": [args.u, args.v], "encoder": [int(v) for v in res.encoder], "extrapolated": res.extrapolated,
            "warning": res.warning}
    _dump_json(out / "mapped.json", data)
    print(json.dumps(data, sort_keys=True))
    return EXIT_OK


def cmd_trial(args, cfg: HarnessConfig, out: Path) -> int:
    seed = ctl.trial_seed(cfg.seed, args.index)
    scene = make_scene(seed, cfg.layout, cfg.variability)
    calib = ctl.default_calibration(cfg.layout, cfg.motion)
    ctrl = dataclasses.replace(cfg.controller, vision_mode="pipeline") if args.frames else cfg.controller
    frames = {} if args.frames else None
    rec, robot, final = ctl.run_trial(scene, ctrl, cfg.noise, calib, profile=cfg.motion, trial_index=args.index,
                                      seed=seed, pipeline=cfg.pipeline, frames=frames)
    (out / "trial.csv").write_text(ctl.records_to_csv([rec]))
    (out / "telemetry.jsonl").write_text("".join(line + "\n" for line in robot.telemetry_lines()))
    (out / "scene_initial.json").write_text(scene.dumps())
    (out / "scene_final.json").write_text(final.dumps())
    for name, img in sorted((frames or {}).items()):
        if img.ndim == 3:
            save_png(out / f"{name}.png", img)
        else:
            save_pgm(out / f"{name}.pgm", img)
    print(f"outcome={rec.outcome} cycle={rec.total_time:.3f}s")
    return EXIT_OK


def cmd_batch(args, cfg: HarnessConfig, out: Path) -> int:
    calib = ctl.default_calibration(cfg.layout, cfg.motion)
    records, summary = ctl.run_batch(args.n, cfg.controller, cfg.noise, cfg.seed, layout=cfg.layout,
                                     profile=cfg.motion, variability=cfg.variability, calib=calib,
                                     workers=args.workers)
    (out / "trials.csv").write_text(ctl.records_to_csv(records))
    _dump_json(out / "summary.json", _rounded(summary.to_dict()))
    print(f"grasp={summary.grasp_rate:.3f} placement={summary.placement_rate:.3f} "
          f"cycle={summary.mean_cycle:.3f}s mdph={summary.mdph:.1f}+-{summary.mdph_std:.1f}")
    return EXIT_OK


def _rounded(d):
    if isinstance(d, float):
        return round(d, 9)
    if isinstance(d, dict):
        return {k: _rounded(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_rounded(v) for v in d]
    return d


def _read_trials(path) -> list[float]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "t_total" not in rows[0]:
        raise ConfigurationError(f"{path} is not a trials CSV")
    return [float(r["t_total"]) for r in rows if r["outcome"] not in ctl.ABORTS]


def cmd_report(args, cfg: HarnessConfig, out: Path) -> int:
    if not args.table1 and not args.trials:
        raise UsageError("report needs --table1 and/or --trials")
    if args.table1:
        (out / "table1.csv").write_text(table1_csv())
        print(f"wrote {out / 'table1.csv'}")
    if args.trials:
        records = {}
        for item in args.trials:
            name, _, path = item.rpartition("=")
            name = name or Path(path).stem
            records[name] = mdph_samples(_read_trials(path))
        render_report(records, out, savings_s=args.savings)
        print(f"wrote {out / 'methods.csv'}")
    return EXIT_OK


def cmd_calibrate_noise(args, cfg: HarnessConfig, out: Path) -> int:
    calib = ctl.default_calibration(cfg.layout, cfg.motion)
    noise, points = ctl.calibrate_noise(args.n, target=args.target, vision_sigma_mm=args.vision_sigma,
                                        offset_sigmas=args.offset_sigmas, p_residuals=args.p_residuals,
                                        master_seed=cfg.seed, cfg=cfg.controller, layout=cfg.layout,
                                        profile=cfg.motion, calib=calib, workers=args.workers)
    rows = [{k: (_f(v) if isinstance(v, float) else v) for k, v in dataclasses.asdict(p).items()} for p in points]
    (out / "noise_sweep.csv").write_text(
        _csv_text(rows, ["offset_sigma_mm", "p_residual", "grasp_rate", "placement_rate"]))
    calibrated = dataclasses.replace(cfg, noise=noise, controller=dataclasses.replace(
        cfg.controller, correct_foreshortening=True))
    (out / "calibrated.json").write_text(calibrated.dumps())
    print(f"chosen offset_sigma={noise.offset_sigma_mm} p_residual={noise.p_residual}")
    return EXIT_OK


# ------------------------------------------------------------------ wiring
def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default="default",
                        help=f"preset name {PRESETS} or path to a JSON config (default: default)")
    common.add_argument("--seed", type=int, help="master seed; overrides the config")
    common.add_argument("--output", help=f"output directory; overrides ${OUTPUT_ENV} and the config")

    p = _Parser(prog="mosquito-pnp", description="Simulated mosquito pick-and-place workcell harness.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("locate", parents=[common], help="overhead localization on a rendered or given frame")
    s.add_argument("--image", help="RGB PNG to analyse instead of a rendered scene")
    s.add_argument("--empty", action="store_true", help="render an empty cup")
    s.add_argument("--crop", type=int, nargs=4, metavar=("X", "Y", "W", "H"))
    s.add_argument("--full-frame", action="store_true", help="skip the default cup crop")
    s.add_argument("--debug", action="store_true", help="dump every pipeline stage as PNG")
    s.set_defaults(func=cmd_locate)

    s = sub.add_parser("segment-eval", parents=[common], help="segmentation metrics on onboard frames")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--save-frames", action="store_true", help="also write the generated frames and masks")
    s.add_argument("--pairs", help="directory of NAME.png images with NAME_truth.pgm masks to evaluate instead")
    s.set_defaults(func=cmd_segment_eval)

    s = sub.add_parser("calibrate", parents=[common], help="overhead grid sweep, map fit and onboard scale")
    s.add_argument("--nx", type=int, default=7)
    s.add_argument("--ny", type=int, default=7)
    s.add_argument("--occlude", type=int, nargs="*", help="grid sample indices whose frame hides the tool")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("apply-map", parents=[common], help="map one overhead pixel to encoder counts")
    s.add_argument("--map", required=True)
    s.add_argument("u", type=float)
    s.add_argument("v", type=float)
    s.set_defaults(func=cmd_apply_map)

    s = sub.add_parser("trial", parents=[common], help="one pick-and-place cycle with telemetry")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--frames", action="store_true", help="render and save camera frames (pipeline vision)")
    s.set_defaults(func=cmd_trial)

    s = sub.add_parser("batch", parents=[common], help="seeded batch of trials")
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_batch)

    s = sub.add_parser("report", parents=[common], help="throughput tables")
    s.add_argument("--table1", action="store_true", help="reproduce the manual-fixture operator table")
    s.add_argument("--trials", nargs="*", metavar="NAME=CSV", help="trials CSVs from batch runs")
    s.add_argument("--savings", type=float, default=2.5)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("calibrate-noise", parents=[common], help="fit the noise profile to the target rate")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--target", type=float, default=0.90)
    s.add_argument("--vision-sigma", type=float, default=0.05)
    s.add_argument("--offset-sigmas", type=float, nargs="+", default=[0.03, 0.04, 0.05])
    s.add_argument("--p-residuals", type=float, nargs="+", default=[0.04, 0.06, 0.08])
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_calibrate_noise)
    return p


def resolve_output(args, cfg: HarnessConfig) -> Path:
    return Path(args.output or os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise UsageError("--seed must be non-negative")
            cfg = cfg.with_overrides(seed=args.seed)
        out = resolve_output(args, cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigurationError) as exc:
        print(f"mosquito-pnp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg, out)
    except (UsageError, ConfigurationError) as exc:
        print(f"mosquito-pnp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MosquitoPnPError, OSError) as exc:
        print(f"mosquito-pnp: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
