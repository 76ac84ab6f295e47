"""Command-line entry point: ``pillarforge <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .augment import (
    ClassSizeTable,
    MatchPlan,
    apply_match_plan,
    compute_stats,
    normalize_box_sizes,
    random_global_transform,
    shape_aware_augment,
)
from .config import RunConfig, load_config
from .dataset import MANIFEST, frame_ids, load_dataset, load_frame, load_labels, save_frame
from .errors import ConfigError, PillarforgeError
from .evaluation import evaluate, format_reports
from .geometry import build_height_profile, ransac_plane
from .openlabel import convert_sim_labels, load_class_table, write_openlabel
from .pcdio import load_pcd
from .model import Detection
from .pillars import pillarize
from .postprocess import decode_direction, di_nms, read_detections, rectify_detections, write_detections
from .semisynth import NoiseSpec, compose

log = logging.getLogger("pillarforge")

EXIT_OK, EXIT_ITEMS, EXIT_USAGE = 0, 1, 2
DROPOUT_PRESETS = {"0.5": 0.5, "0.25": 0.25}
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("PILLARFORGE_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def _seeds(root: int, index: int, n: int) -> list:
    """``n`` independent 32-bit seeds for frame ``index`` from ``root XOR index``."""
    ss = np.random.SeedSequence(root ^ index)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _manifest(cfg: RunConfig, command: str, entries: list, **extra) -> dict:
    return {"tool": "pillarforge", "version": __version__, "command": command,
            "config_sha256": cfg.digest(), "seed": cfg.seed, "frames": entries, **extra}


def _map(fn, tasks: list, jobs: int) -> list:
    """Run ``fn`` over ``tasks``; results keep task order whatever ``jobs`` is."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _guarded(fn, task):
    try:
        return {"ok": True, **fn(task)}
    except Exception as exc:  # reported per item; the run as a whole fails
        for p in task.get("_written", []):
            Path(p).unlink(missing_ok=True)
        return {"ok": False, "frame_id": task.get("frame_id"), "error": f"{type(exc).__name__}: {exc}"}


def _finish(cfg: RunConfig, args, command: str, results: list, out_dir: Path | None, **extra) -> int:
    errors = [r for r in results if not r["ok"]]
    if errors:
        for r in errors:
            print(f"error: frame {r['frame_id']}: {r['error']}", file=sys.stderr)
        if out_dir is not None and not args.dry_run:
            for r in results:
                for p in r.get("written", []):
                    Path(p).unlink(missing_ok=True)
        print(f"{command}: {len(errors)} of {len(results)} frame(s) failed; outputs removed", file=sys.stderr)
        return EXIT_ITEMS
    entries = [{k: v for k, v in r.items() if k not in ("ok", "written")} for r in results]
    if out_dir is not None and not args.dry_run:
        (out_dir / MANIFEST).write_text(_dump(_manifest(cfg, command, entries, **extra)))
    print(f"{command}: {len(results)} frame(s) {'checked' if args.dry_run else 'written'}", file=sys.stderr)
    return EXIT_OK


def _prepare_out(path, dry_run: bool) -> Path:
    out = Path(path)
    if not dry_run:
        out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------- generate


def _generate_task(task: dict) -> dict:
    cfg = RunConfig.model_validate(task["config"])
    index, fid = task["index"], task["frame_id"]
    s_ransac, s_drop, s_noise, s_draw = _seeds(cfg.seed, index, 4)
    sched = cfg.schedule
    if index % sched.every == 0:
        draw = np.random.default_rng(s_draw)
        dropout = float(draw.uniform(*sched.dropout_range))
        fraction = float(draw.uniform(*sched.noise_fraction_range))
        sigma = sched.noise_sigma
    else:
        dropout, fraction, sigma = 0.0, 0.0, 0.0

    background = load_pcd(task["background"])
    synthetic = load_frame(task["synthetic_dir"], fid, require_labels=True)
    g = cfg.generate
    plane = ransac_plane(background, g.ransac_iterations, g.ransac_threshold, seed=s_ransac)
    profile = build_height_profile(background, plane, g.cell_size, g.ground_band)
    comp = compose(background, synthetic, profile, NoiseSpec(sigma, 0.0, fraction, s_noise), dropout,
                   g.clearance, s_drop)
    written = []
    if not task["dry_run"]:
        task["_written"] = written
        written += save_frame(comp.frame, task["out_dir"], double=g.double_precision)
    frame = comp.frame
    counts = Counter(int(k) for k in frame.provenance if k >= 0)
    return {
        "frame_id": fid,
        "index": index,
        "seed": cfg.seed ^ index,
        "background": Path(task["background"]).name,
        "dropout_rate": dropout,
        "noise_fraction": fraction,
        "noise_sigma": sigma,
        "plane": {"normal": [float(v) for v in plane.normal], "d": float(plane.d), "inliers": plane.inlier_count},
        "background_points": int((frame.provenance < 0).sum()),
        "removed_background": comp.removed_background,
        "dropped_background": comp.dropped_background,
        "noised_background": comp.noised_background,
        "object_points": {a.object_id: counts.get(k, 0) for k, a in enumerate(frame.annotations)},
        "written": [str(p) for p in written],
    }


def cmd_generate(args, cfg: RunConfig) -> int:
    bg_dir = args.background_dir or cfg.paths.background_dir
    syn_dir = args.synthetic_dir or cfg.paths.synthetic_dir
    out_arg = args.out_dir or cfg.paths.out_dir
    if not (bg_dir and syn_dir and out_arg):
        raise ConfigError("generate needs background, synthetic and output directories")
    backgrounds = [Path(bg_dir) / f"{b}.pcd" for b in frame_ids(bg_dir)]
    if not backgrounds:
        raise ConfigError(f"no background .pcd files in {bg_dir}")
    ids = frame_ids(syn_dir)
    out = _prepare_out(out_arg, args.dry_run)
    conf = cfg.model_dump(mode="json")
    tasks = [{"config": conf, "index": i, "frame_id": fid, "background": str(backgrounds[i % len(backgrounds)]),
              "synthetic_dir": str(syn_dir), "out_dir": str(out), "dry_run": args.dry_run}
             for i, fid in enumerate(ids)]
    results = _map(_generate_worker, tasks, args.jobs)
    return _finish(cfg, args, "generate", results, out)


def _generate_worker(task):
    return _guarded(_generate_task, task)


# ------------------------------------------------------------------ stats


def cmd_stats(args, cfg: RunConfig) -> int:
    stats = compute_stats(load_dataset(args.dataset_dir))
    text = stats.to_json() + "\n"
    if args.output and not args.dry_run:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- augment


def _augment_task(task: dict) -> dict:
    cfg = RunConfig.model_validate(task["config"])
    index, fid = task["index"], task["frame_id"]
    s_match, s_global, s_shape = _seeds(cfg.seed, index, 3)
    frame = load_frame(task["in_dir"], fid)
    entry = {"frame_id": fid, "index": index, "seed": cfg.seed ^ index, "points_in": len(frame.cloud)}
    aug = cfg.augment
    if aug.match_plan is not None or task["preset"] is not None:
        plan = aug.match_plan.build() if aug.match_plan is not None else None
        factors = dict(plan.object_upsample_factor) if plan else {}
        rate = task["preset"] if task["preset"] is not None else plan.background_dropout_rate
        frame = apply_match_plan(frame, MatchPlan(factors, rate), seed=s_match)
        entry["match_plan"] = {"object_upsample_factor": factors, "background_dropout_rate": rate}
    if aug.global_transform.enabled:
        gt = aug.global_transform
        frame, params = random_global_transform(frame, s_global, gt.rotation_range, gt.flip_prob, gt.scale_range)
        entry["global_transform"] = params
    if aug.shape_aware.enabled:
        sa = aug.shape_aware
        frame = shape_aware_augment(frame, sa.p_dropout, sa.p_swap, sa.p_sparsify, seed=s_shape)
        entry["shape_aware"] = True
    entry["points_out"] = len(frame.cloud)
    written = []
    if not task["dry_run"]:
        task["_written"] = written
        written += save_frame(frame, task["out_dir"], double=cfg.generate.double_precision)
    entry["written"] = [str(p) for p in written]
    return entry


def _augment_worker(task):
    return _guarded(_augment_task, task)


def cmd_augment(args, cfg: RunConfig) -> int:
    out = _prepare_out(args.out_dir, args.dry_run)
    preset = DROPOUT_PRESETS[args.dropout_preset] if args.dropout_preset else None
    conf = cfg.model_dump(mode="json")
    tasks = [{"config": conf, "index": i, "frame_id": fid, "in_dir": str(args.in_dir), "out_dir": str(out),
              "dry_run": args.dry_run, "preset": preset} for i, fid in enumerate(frame_ids(args.in_dir))]
    return _finish(cfg, args, "augment", _map(_augment_worker, tasks, args.jobs), out)


# -------------------------------------------------------------- pillarize


def _pillarize_task(task: dict) -> dict:
    cfg = RunConfig.model_validate(task["config"])
    fid = task["frame_id"]
    frame = load_frame(task["in_dir"], fid)
    tensor = pillarize(frame.cloud, cfg.pillars.build(), seed=cfg.seed ^ task["index"])
    written = []
    if not task["dry_run"]:
        task["_written"] = written
        path = Path(task["out_dir"]) / f"{fid}.pillars.bin"
        written.append(path)
        tensor.write(path)
    return {"frame_id": fid, "index": task["index"], "pillars": len(tensor),
            "points": int(tensor.num_points.sum()), "written": [str(p) for p in written]}


def _pillarize_worker(task):
    return _guarded(_pillarize_task, task)


def cmd_pillarize(args, cfg: RunConfig) -> int:
    pcfg = cfg.pillars.build()
    out = _prepare_out(args.out_dir, args.dry_run)
    conf = cfg.model_dump(mode="json")
    tasks = [{"config": conf, "index": i, "frame_id": fid, "in_dir": str(args.in_dir), "out_dir": str(out),
              "dry_run": args.dry_run} for i, fid in enumerate(frame_ids(args.in_dir))]
    h, w = pcfg.grid_shape
    return _finish(cfg, args, "pillarize", _map(_pillarize_worker, tasks, args.jobs), out,
                   pillar_config=pcfg.to_dict(), grid={"height": h, "width": w})


# -------------------------------------------------------------------- nms


def cmd_nms(args, cfg: RunConfig) -> int:
    params = cfg.nms.build()
    out = {}
    n_in = 0
    for fid, dets in read_detections(args.preds_in).items():
        n_in += len(dets)
        if cfg.nms.rectify:
            dets = rectify_detections(dets, params.beta)
        dets = [Detection(decode_direction(d.box, d.direction_front), d.category, d.score, d.iou_pred,
                          d.direction_front) for d in dets]
        out[fid] = di_nms(dets, params)
    if not args.dry_run:
        write_detections(args.preds_out, out)
    print(f"nms: {n_in} detection(s) in, {sum(len(v) for v in out.values())} out", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------- eval


def cmd_eval(args, cfg: RunConfig) -> int:
    gts = load_labels(args.gt_dir)
    preds = dict(read_detections(args.preds))
    reports = {}
    for ec in cfg.eval.build():
        reports[f"{ec.metric}@{ec.iou_threshold:g}"] = evaluate(preds, gts, ec)
    sys.stdout.write(format_reports(reports) + "\n")
    if args.output and not args.dry_run:
        Path(args.output).write_text(_dump({k: r.to_dict() for k, r in reports.items()}))
    return EXIT_OK


# -------------------------------------------------------------- normalize


def cmd_normalize(args, cfg: RunConfig) -> int:
    frames = load_dataset(args.in_dir)
    table = ClassSizeTable.load(args.table) if args.table else "from-data"
    out_frames, table = normalize_box_sizes(frames, table)
    if not args.dry_run:
        out = _prepare_out(args.out_dir, False)
        for fr in out_frames:
            save_frame(fr, out, double=cfg.generate.double_precision)
        (out / "class_sizes.json").write_text(table.to_json() + "\n")
    sys.stdout.write(table.to_json() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- convert


def cmd_convert(args, cfg: RunConfig) -> int:
    table_path = args.class_table or cfg.paths.class_table
    table = load_class_table(table_path) if table_path else None
    unknown = Counter()
    frames = convert_sim_labels(Path(args.sim_export).read_text(), half_extents=not args.full_extents,
                                class_table=table, strict=args.strict_classes or cfg.strict_classes, report=unknown)
    if not args.dry_run:
        out = _prepare_out(args.out_dir, False)
        for fid, anns in frames.items():
            write_openlabel({fid: anns}, out / f"{fid}.json")
    for name, n in sorted(unknown.items()):
        print(f"warning: unknown class {name!r} mapped to Other ({n} object(s))", file=sys.stderr)
    print(f"convert: {len(frames)} frame(s)", file=sys.stderr)
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-frame commands")
    common.add_argument("--dry-run", action="store_true", help="validate config and inputs without writing")
    common.add_argument("--strict-classes", action="store_true", help="fail on unknown simulator classes")

    parser = argparse.ArgumentParser(prog="pillarforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="compose semi-synthetic frames")
    p.add_argument("background_dir", nargs="?")
    p.add_argument("synthetic_dir", nargs="?")
    p.add_argument("out_dir", nargs="?")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", parents=[common], help="dataset point statistics")
    p.add_argument("dataset_dir")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("augment", parents=[common], help="domain matching and training augmentation")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--dropout-preset", choices=sorted(DROPOUT_PRESETS), help="fixed background dropout rate")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("pillarize", parents=[common], help="write pillar tensors")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_pillarize)

    p = sub.add_parser("nms", parents=[common], help="rectify scores and run DI-NMS on JSON-lines detections")
    p.add_argument("preds_in")
    p.add_argument("preds_out")
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval", parents=[common], help="evaluate detections against OpenLABEL ground truth")
    p.add_argument("preds")
    p.add_argument("gt_dir")
    p.add_argument("-o", "--output", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("normalize", parents=[common], help="normalize box sizes per class")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--table", help="class size table JSON (default: computed from the data)")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("convert", parents=[common], help="convert a simulator export to OpenLABEL")
    p.add_argument("sim_export")
    p.add_argument("out_dir")
    p.add_argument("--class-table")
    p.add_argument("--full-extents", action="store_true", help="extents are full sizes, not half sizes")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PillarforgeError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ITEMS


if __name__ == "__main__":
    sys.exit(main())
