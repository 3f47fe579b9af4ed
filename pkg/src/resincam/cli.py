"""Command-line orchestrator: one subcommand per pipeline stage.

Exit codes: 0 success, 1 stage failure, 2 usage or I/O error. Every
subcommand supports --json for machine-readable output. Outputs carry
no timestamps, so repeated runs over the same inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import sys

import numpy as np

from . import __version__
from .config import ConfigError, load_config_file, pipeline_config_from_dict
from .evaluation import (EvaluationError, classify_quality, grade_region, iou,
                         run_evaluation)
from .gcode import (GcodeError, GcodeSyntaxError, emit_gcode, optimize_travel,
                    parse_gcode, plan_toolpath, simulate_toolpath)
from .imaging import (BinaryMask, DecodeError, ImagingError, RasterImage,
                      load_image, load_manifest, mask_from_image, remove_background,
                      save_image)
from .prompts import dedup_prompts, generate_grid, merge_custom_prompts
from .segmentation import binarize, run_backend, select_final_mask

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_USAGE = 2


class StageFailure(Exception):
    def __init__(self, stage: str, message: str, exit_code: int = EXIT_STAGE):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.exit_code = exit_code


def _fail(stage: str, exc: Exception) -> StageFailure:
    io_like = isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError, DecodeError))
    return StageFailure(stage, str(exc), EXIT_USAGE if io_like else EXIT_STAGE)


def _load_stage(path: str) -> RasterImage:
    try:
        return load_image(path)
    except (ImagingError, OSError) as exc:
        raise _fail("load", exc)


def _gather_config(args) -> dict:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = load_config_file(args.config)
        except (ConfigError, OSError) as exc:
            raise StageFailure("config", str(exc), EXIT_USAGE)
    return doc


def _machine_overrides(args) -> dict:
    machine = {
        "mm_per_pixel": getattr(args, "mm_per_pixel", None),
        "safe_z": getattr(args, "safe_z", None),
        "cut_z": getattr(args, "cut_z", None),
        "feed_rate": getattr(args, "feed_rate", None),
        "plunge_rate": getattr(args, "plunge_rate", None),
        "spindle_rpm": getattr(args, "spindle_rpm", None),
        "tool_diameter": getattr(args, "tool_diameter", None),
    }
    out: dict = {"machine": {k: v for k, v in machine.items() if v is not None}}
    if getattr(args, "optimize", None):
        out["optimize_travel"] = True
    return out


def _segmentation_overrides(args) -> dict:
    background = {
        "mode": getattr(args, "bg_mode", None),
        "tolerance": getattr(args, "bg_tolerance", None),
    }
    if getattr(args, "key_color", None):
        background["key_color"] = [int(v) for v in args.key_color.split(",")]
    grid = {
        "rows": getattr(args, "rows", None),
        "cols": getattr(args, "cols", None),
        "patch_size": getattr(args, "patch_size", None),
        "dedup_threshold": getattr(args, "dedup_threshold", None),
        "dedup_mode": getattr(args, "dedup_mode", None),
    }
    backend = {
        "variant": getattr(args, "backend", None),
        "threshold_mode": getattr(args, "threshold_mode", None),
        "fixed_threshold": getattr(args, "threshold", None),
        "color_tol": getattr(args, "color_tol", None),
        "connectivity": getattr(args, "connectivity", None),
        "exchange_dir": getattr(args, "exchange_dir", None),
    }
    if getattr(args, "worker_cmd", None):
        backend["worker_cmd"] = shlex.split(args.worker_cmd)
    overrides: dict = {
        "background": {k: v for k, v in background.items() if v is not None},
        "grid": {k: v for k, v in grid.items() if v is not None},
        "backend": {k: v for k, v in backend.items() if v is not None},
    }
    if getattr(args, "accept_threshold", None) is not None:
        overrides["accept_threshold"] = args.accept_threshold
    return overrides


def _run_segmentation(img: RasterImage, cfg):
    fg = remove_background(img, cfg.background)
    grid = generate_grid(img, cfg.grid, fg)
    prompts = dedup_prompts(grid, cfg.grid.dedup_threshold, cfg.grid.dedup_mode)
    prompts = merge_custom_prompts(prompts, [])
    result = run_backend(img, fg, prompts, cfg.backend)
    final = select_final_mask(result, cfg.accept_threshold)
    return fg, prompts, result, final


def _emit_json(args, payload: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_segment(args) -> int:
    img = _load_stage(args.image)
    try:
        cfg = pipeline_config_from_dict(_gather_config(args), _segmentation_overrides(args))
        fg, prompts, result, final = _run_segmentation(img, cfg)
        save_image(binarize(final), args.output)
    except StageFailure:
        raise
    except Exception as exc:
        raise _fail("segment", exc)
    payload = {
        "output": args.output,
        "foreground_pixels": fg.count(),
        "prompts_kept": len(prompts.kept),
        "prompts_generated": prompts.generated_count,
        "proposals": [{"confidence": p.confidence, "pixels": p.mask.count()} for p in result.proposals],
        "retained_pixels": final.count(),
        "warnings": list(result.warnings),
    }
    if not args.json:
        print(f"kept {final.count()} retained pixels "
              f"({len(result.proposals)} proposals, {len(prompts.kept)} prompts) -> {args.output}")
    _emit_json(args, payload)
    return EXIT_OK


def cmd_binarize(args) -> int:
    img = _load_stage(args.image)
    try:
        mask = mask_from_image(img, threshold=args.threshold)
        save_image(binarize(mask), args.output)
    except Exception as exc:
        raise _fail("binarize", exc)
    if not args.json:
        print(f"{mask.count()} retained pixels -> {args.output}")
    _emit_json(args, {"output": args.output, "retained_pixels": mask.count()})
    return EXIT_OK


def _machine_from_args(args) -> tuple:
    cfg = pipeline_config_from_dict(_gather_config(args), _machine_overrides(args))
    try:
        return cfg.require_machine(), cfg.optimize_travel
    except ConfigError as exc:
        raise StageFailure("config", str(exc), EXIT_USAGE)


def cmd_gcode(args) -> int:
    img = _load_stage(args.binary)
    machine, optimize = _machine_from_args(args)
    try:
        toolpath = plan_toolpath(img, machine)
        if optimize:
            toolpath = optimize_travel(toolpath)
        program = emit_gcode(toolpath)
        removal = simulate_toolpath(parse_gcode(program.text), machine, img.width, img.height)
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(program.text)
    except GcodeError as exc:
        raise _fail("gcode", exc)
    payload = {
        "output": args.output,
        "lines": len(program.lines),
        "cut_mm": toolpath.cut_length_mm,
        "rapid_mm": toolpath.rapid_length_mm,
        "removed_cells": removal.count(),
    }
    if not args.json:
        print(f"{len(program.lines)} lines, cut {toolpath.cut_length_mm:.3f} mm, "
              f"rapid {toolpath.rapid_length_mm:.3f} mm, removes {removal.count()} cells -> {args.output}")
    _emit_json(args, payload)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        with open(args.program, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise _fail("load", exc)
    if args.like:
        ref = _load_stage(args.like)
        width, height = ref.width, ref.height
    elif args.width and args.height:
        width, height = args.width, args.height
    else:
        raise StageFailure("simulate", "need --like IMAGE or --width and --height", EXIT_USAGE)
    machine, _ = _machine_from_args(args)
    try:
        program = parse_gcode(text)
        removal = simulate_toolpath(program, machine, width, height)
    except GcodeError as exc:
        raise _fail("simulate", exc)
    if args.output:
        img = RasterImage(np.where(removal.removed[:, :, None], 0, 255).astype(np.uint8).repeat(3, axis=2))
        save_image(img, args.output)
    payload = {
        "removed_cells": removal.count(),
        "width": width,
        "height": height,
        "warnings": list(removal.warnings),
    }
    if not args.json:
        print(f"removes {removal.count()} of {width * height} cells"
              + (f" -> {args.output}" if args.output else ""))
        for w in removal.warnings:
            print(f"warning: {w}", file=sys.stderr)
    _emit_json(args, payload)
    return EXIT_OK


def cmd_parse(args) -> int:
    try:
        with open(args.program, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise _fail("load", exc)
    try:
        program = parse_gcode(text)
    except GcodeSyntaxError as exc:
        raise StageFailure("parse", str(exc))
    if args.json:
        _emit_json(args, {"lines": program.lines})
    else:
        sys.stdout.write(program.text)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except (ImagingError, OSError) as exc:
        raise StageFailure("manifest", str(exc), EXIT_USAGE)
    predictions: dict[str, BinaryMask] = {}
    try:
        for entry in manifest.entries:
            pred_path = os.path.join(args.pred_dir, f"{entry.id}.png")
            if not os.path.exists(pred_path):
                raise EvaluationError(f"missing prediction for id {entry.id!r}: {pred_path}")
            predictions[entry.id] = mask_from_image(load_image(pred_path))
        report = run_evaluation(manifest, predictions)
    except (EvaluationError, ImagingError) as exc:
        raise _fail("evaluate", exc)
    if args.json:
        _emit_json(args, report.to_dict())
    else:
        print(report.to_text())
    return EXIT_OK


def cmd_grade(args) -> int:
    img = _load_stage(args.image)
    mask_img = _load_stage(args.mask)
    try:
        region = mask_from_image(mask_img)
        grade = grade_region(img, region)
    except EvaluationError as exc:
        raise _fail("grade", exc)
    if not args.json:
        print(grade.value)
    _emit_json(args, {"grade": grade.value, "region_pixels": region.count()})
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = pipeline_config_from_dict(
        _gather_config(args), {**_segmentation_overrides(args), **_machine_overrides(args)})
    try:
        machine = cfg.require_machine()
    except ConfigError as exc:
        raise StageFailure("config", str(exc), EXIT_USAGE)
    os.makedirs(args.output_dir, exist_ok=True)

    img = _load_stage(args.image)
    try:
        fg, prompts, result, final = _run_segmentation(img, cfg)
    except Exception as exc:
        raise _fail("segment", exc)
    try:
        # Cut non-retained wood only; keyed-out backdrop is empty space.
        keep = BinaryMask(final.bits | ~fg.bits)
        binary = binarize(keep)
        toolpath = plan_toolpath(binary, machine)
        if cfg.optimize_travel:
            toolpath = optimize_travel(toolpath)
        program = emit_gcode(toolpath)
        removal = simulate_toolpath(parse_gcode(program.text), machine, img.width, img.height)
    except GcodeError as exc:
        raise _fail("gcode", exc)

    mask_path = os.path.join(args.output_dir, "mask.png")
    binary_path = os.path.join(args.output_dir, "binary.png")
    gcode_path = os.path.join(args.output_dir, "out.gcode")
    report_path = os.path.join(args.output_dir, "report.json")
    try:
        save_image(binarize(fg), mask_path)
        save_image(binary, binary_path)
        with open(gcode_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(program.text)
    except OSError as exc:
        raise StageFailure("write", str(exc), EXIT_USAGE)

    report = {
        "image": os.path.basename(args.image),
        "foreground_pixels": fg.count(),
        "prompts_kept": len(prompts.kept),
        "prompts_generated": prompts.generated_count,
        "proposals": [{"confidence": p.confidence, "pixels": p.mask.count()} for p in result.proposals],
        "retained_pixels": final.count(),
        "gcode": {
            "lines": len(program.lines),
            "cut_mm": toolpath.cut_length_mm,
            "rapid_mm": toolpath.rapid_length_mm,
            "removed_cells": removal.count(),
        },
        "warnings": list(result.warnings) + list(removal.warnings),
    }
    if args.truth:
        truth_img = _load_stage(args.truth)
        score = iou(final, mask_from_image(truth_img))
        report["iou_percent"] = score.percent_1dp
        report["quality"] = classify_quality(score).value
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if not args.json:
        print(f"wrote {mask_path}, {binary_path}, {gcode_path}, {report_path}")
    _emit_json(args, report)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(persist_dir=args.persist_dir, static_dir=args.static_dir)
    if args.json:
        print(json.dumps({"host": args.host, "port": args.port,
                          "static_dir": args.static_dir, "persist_dir": args.persist_dir},
                         sort_keys=True))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _add_machine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mm-per-pixel", type=float, dest="mm_per_pixel",
                   help="physical pitch of one pixel in mm (required unless set in --config)")
    p.add_argument("--safe-z", type=float, dest="safe_z", help="travel height in mm (default 5)")
    p.add_argument("--cut-z", type=float, dest="cut_z", help="cutting depth in mm, negative (default -1)")
    p.add_argument("--feed-rate", type=float, dest="feed_rate", help="cutting feed in mm/min (default 300)")
    p.add_argument("--plunge-rate", type=float, dest="plunge_rate", help="plunge feed in mm/min (default 100)")
    p.add_argument("--spindle-rpm", type=int, dest="spindle_rpm", help="spindle speed (default 10000)")
    p.add_argument("--tool-diameter", type=float, dest="tool_diameter",
                   help="tool diameter in mm (default: mm per pixel)")
    p.add_argument("--optimize", action="store_true", help="reorder cut runs to shorten rapid travel")


def _add_segmentation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bg-mode", choices=["chroma-key", "corner-sample"], dest="bg_mode")
    p.add_argument("--key-color", dest="key_color", help="chroma key color as R,G,B")
    p.add_argument("--bg-tolerance", type=float, dest="bg_tolerance",
                   help="max RGB distance to count as background (default 40)")
    p.add_argument("--rows", type=int, help="prompt grid rows (default 16)")
    p.add_argument("--cols", type=int, help="prompt grid cols (default 16)")
    p.add_argument("--patch-size", type=int, dest="patch_size", help="descriptor patch size, odd (default 7)")
    p.add_argument("--dedup-threshold", type=float, dest="dedup_threshold",
                   help="descriptor distance below which prompts are redundant (default 12)")
    p.add_argument("--dedup-mode", choices=["greedy", "cluster"], dest="dedup_mode")
    p.add_argument("--backend", choices=["threshold", "region_grow", "external"])
    p.add_argument("--threshold-mode", choices=["otsu", "fixed"], dest="threshold_mode")
    p.add_argument("--threshold", type=int, help="fixed luma threshold (with --threshold-mode fixed)")
    p.add_argument("--color-tol", type=float, dest="color_tol",
                   help="region-grow color tolerance (default 30)")
    p.add_argument("--connectivity", type=int, choices=[4, 8])
    p.add_argument("--exchange-dir", dest="exchange_dir", help="external backend exchange directory")
    p.add_argument("--worker-cmd", dest="worker_cmd", help="external worker command line")
    p.add_argument("--accept-threshold", type=float, dest="accept_threshold",
                   help="min proposal confidence for the final mask (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resincam",
        description="Segment the retained resin region of a wood cross-section and compile it to CNC G-code.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="image -> retained-region mask PNG")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    _add_segmentation_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("binarize", help="image -> exact black/white PNG by luma threshold")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threshold", type=int, default=128)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("gcode", help="binary image -> G-code program")
    p.add_argument("binary")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    _add_machine_flags(p)
    p.set_defaults(func=cmd_gcode)

    p = sub.add_parser("simulate", help="replay a program and report removed cells")
    p.add_argument("program")
    p.add_argument("--like", help="take grid dimensions from this image")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("-o", "--output", help="write the removal map as a PNG (black = removed)")
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    _add_machine_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("parse", help="canonicalize a program or report the first syntax error")
    p.add_argument("program")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("evaluate", help="score prediction PNGs against a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True, dest="pred_dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grade", help="grade the masked region of an image by resin color")
    p.add_argument("image")
    p.add_argument("--mask", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_grade)

    p = sub.add_parser("pipeline", help="image -> mask.png, binary.png, out.gcode, report.json")
    p.add_argument("image")
    p.add_argument("-o", "--output-dir", required=True, dest="output_dir")
    p.add_argument("--truth", help="optional ground-truth mask PNG to score against")
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    _add_segmentation_flags(p)
    _add_machine_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static-dir", dest="static_dir", help="directory of UI assets to serve at /ui")
    p.add_argument("--persist-dir", dest="persist_dir", help="directory for session persistence")
    p.add_argument("--json", action="store_true", help="print the serving config as JSON on startup")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (GcodeError, ImagingError, EvaluationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
