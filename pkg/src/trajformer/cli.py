"""Command line: simulate, train, track, eval, gradcheck, plotdata.

Every command writes its fully resolved configuration as ``config.json`` next
to its outputs; ``--config`` on the same command replays it.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .checks import TOLERANCE, run_gradchecks
from .evaluation import compute_mota, sum_tallies, write_csv, write_report
from .io import gt_frames, load_scene, save_scene, scene_paths
from .motion import ConstantVelocityPredictor
from .network import NetworkConfig
from .pipeline import evaluate_scene, ignore_sparse, track_scene
from .sim import CLASSES, NOISE_PRESETS, GenerationError, SceneSpec, build_scene, noise_preset
from .tracker import DetectionScorer, Tracker, TrackerConfig, read_tracks, write_tracks
from .training import (
    TRAIN_PRESETS,
    evaluate_scores,
    label_statistics,
    load_model,
    motion_center_error,
    stage2_samples,
    train,
    train_preset,
)

log = logging.getLogger("trajformer")

OUT_ENV = "TRAJFORMER_OUT"
CLASS_RATIO = (4, 2, 1)  # vehicle : pedestrian : cyclist when only a total is given


class CliError(Exception):
    pass


def out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def split_objects(total: int) -> dict[str, int]:
    """Largest-remainder split of ``total`` objects over the classes."""
    weights = [total * r / sum(CLASS_RATIO) for r in CLASS_RATIO]
    counts = [int(w) for w in weights]
    order = sorted(range(len(CLASSES)), key=lambda i: (-(weights[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return dict(zip(CLASSES, counts))


def write_config(out: Path, command: str, args: argparse.Namespace, **resolved) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "args": {k: v for k, v in vars(args).items() if k not in ("func", "config")}}
    doc["args"]["out"] = str(out)
    doc.update(resolved)
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_scenes(root, limit: int | None = None):
    paths = scene_paths(root)
    if not paths:
        raise CliError(f"no scene files under {root}")
    return paths[:limit] if limit else paths


# --- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = Path(args.out or out_root() / "scenes")
    objects = split_objects(args.objects)
    for cls in CLASSES:
        v = getattr(args, f"{cls}s")
        if v is not None:
            objects[cls] = v
    noise = noise_preset(args.noise)
    written = []
    for k in range(args.scenes):
        seed = args.seed + k
        spec = SceneSpec(frames=args.frames, objects=dict(objects), seed=seed, bounds=args.bounds)
        scene = build_scene(spec, noise)
        inline = True if args.inline_points else (False if args.sidecar else None)
        written.append(save_scene(out / f"scene_{seed:05d}.jsonl", scene, inline))
    write_config(out, "simulate", args, objects=objects, noise=asdict(noise))
    print(f"wrote {len(written)} scene(s) to {out}")
    return 0


# --- train -------------------------------------------------------------------


def _network_config(args) -> NetworkConfig:
    return NetworkConfig(
        dim=args.dim,
        heads=args.heads,
        y_count=args.points,
        t_h=args.traj_len,
        t_f=args.pred_boxes,
        horizon=args.horizon,
        point_blocks=args.point_blocks,
        rounds=args.rounds,
        interaction=args.interaction,
        embedding=args.embedding,
        motion_dim=args.motion_dim,
        seed=args.seed,
    )


def cmd_train(args) -> int:
    out = Path(args.out or out_root() / "train")
    overrides = {
        k: v
        for k, v in dict(epochs=args.epochs, lr=args.lr, batch=args.batch, motion_epochs=args.motion_epochs).items()
        if v is not None
    }
    tcfg = train_preset(args.preset, seed=args.seed, **overrides)
    ncfg = _network_config(args)
    trk = TrackerConfig(t_h=ncfg.t_h, t_f=ncfg.t_f, point_frames=args.point_frames)
    scenes = [load_scene(p) for p in load_scenes(args.scenes, args.max_scenes)]
    write_config(out, "train", args, network=ncfg.to_dict(), train=tcfg.to_dict(), tracker=trk.to_dict())
    result = train(scenes, ncfg, tcfg, trk, out)
    probe = stage2_samples(scenes[: min(len(scenes), 5)], result.predictor, ncfg, trk, tcfg)
    summary = {
        "motion_center_error_m": motion_center_error(result.predictor, scenes, min(5, ncfg.horizon)),
        "scores": evaluate_scores(result.network, probe),
        "label_stats": label_statistics(probe),
        "final_loss": result.scorer_history[-1] if result.scorer_history else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"checkpoint {out / 'model.npz'}; final stage-2 loss {summary['final_loss']}")
    return 0


# --- track -------------------------------------------------------------------


def _tracker_config(args, t_h_default: int, t_f_default: int) -> TrackerConfig:
    t_f = t_f_default if args.pred_boxes is None else args.pred_boxes
    if args.no_pred_boxes or args.detections_only:
        t_f = 0
    return TrackerConfig(
        t_h=args.traj_len or t_h_default,
        t_f=t_f,
        w=args.w,
        point_frames=args.point_frames,
        interaction=args.interaction,
        nms=args.nms,
        seed=args.seed,
    )


def _models(args):
    """(predictor, network, tracker config); network is None for oracle / baseline runs."""
    if args.baseline:
        cfg = _tracker_config(args, 10, 0)
        return ConstantVelocityPredictor(1, cfg.t_h), None, cfg
    if args.oracle:
        cfg = _tracker_config(args, 10, 5)
        return ConstantVelocityPredictor(max(cfg.t_f, 1), cfg.t_h), None, cfg
    if not args.checkpoint or not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint!r} (train one first, or pass --oracle / --baseline)")
    _, predictor, network, _ = load_model(args.checkpoint)
    if args.embedding:
        network.config.embedding = args.embedding
    cfg = _tracker_config(args, network.config.t_h, network.config.t_f)
    return predictor, network, cfg


def _run_tracker(scene, cfg: TrackerConfig, predictor, network, baseline: bool):
    if baseline:
        tracker = Tracker(cfg, DetectionScorer(), predictor, y_count=1)
        return [tracker.step(fr) for fr in scene.frames]
    return track_scene(scene, cfg, predictor, network)


def cmd_track(args) -> int:
    out = Path(args.out or out_root() / "tracks")
    predictor, network, cfg = _models(args)
    paths = load_scenes(args.scenes, args.max_scenes)
    write_config(out, "track", args, tracker=cfg.to_dict(), network=network.config.to_dict() if network else None)
    for p in paths:
        scene = load_scene(p)
        results = _run_tracker(scene, cfg, predictor, network, args.baseline)
        write_tracks(out / f"{p.stem}.tracks.jsonl", results)
    print(f"tracked {len(paths)} scene(s) into {out}")
    return 0


# --- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    tracks_dir = Path(args.tracks)
    reports = []
    for p in load_scenes(args.scenes, args.max_scenes):
        scene = load_scene(p)
        tf = tracks_dir / f"{p.stem}.tracks.jsonl" if tracks_dir.is_dir() else tracks_dir
        if not tf.exists():
            raise CliError(f"missing track file {tf} for scene {p}")
        reports.append(compute_mota(gt_frames(scene), read_tracks(tf), args.gate, args.iou_gate, ignore_sparse(scene, args.min_points)))
    tallies = sum_tallies(reports)
    out = Path(args.out or out_root() / "eval")
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "metrics.json", tallies, {"scenes": len(reports), "label": args.label, "gate": args.gate, "iou_gate": args.iou_gate})
    write_csv(out / "metrics.csv", [(args.label, tallies)])
    write_config(out, "eval", args)
    a = tallies["all"]
    print(f"MOTA {a.mota:.3f}  FP {a.fp}  Miss {a.miss}  IDS {a.ids}  GT {a.gt}")
    return 0


# --- gradcheck -----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.blocks or None, seed=args.seed)
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:20s} rel_err={r.error:.2e} ({r.seconds:.2f}s)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"tolerance": TOLERANCE, "results": [dict(name=r.name, error=r.error, passed=r.passed) for r in results]}
        (out / "gradcheck.json").write_text(json.dumps(doc, indent=2) + "\n")
    return 0 if ok else 1


# --- plotdata ------------------------------------------------------------------

GRIDS = {
    "pred-boxes": [("baseline", {"baseline": True}), ("w/o pred. boxes", {"pred_boxes": 0}), ("1 pred. box", {"pred_boxes": 1}),
                   ("5 pred. boxes", {"pred_boxes": 5}), ("10 pred. boxes", {"pred_boxes": 10})],
    "interaction": [(m, {"interaction": m}) for m in ("none", "global", "global-local")],
    "point-frames": [(f"{k} frame", {"point_frames": k}) for k in (1, 3, 5)],
    "traj-len": [(f"{k} frame", {"traj_len": k}) for k in (5, 10, 15, 20)],
    "embedding": [(e, {"embedding": e}) for e in ("traj", "point", "both")],
}


def cmd_plotdata(args) -> int:
    out = Path(args.out or out_root() / "plotdata")
    out.mkdir(parents=True, exist_ok=True)
    scenes = [load_scene(p) for p in load_scenes(args.scenes, args.max_scenes)]
    rows = []
    for arm, change in GRIDS[args.grid]:
        sub = argparse.Namespace(**{**vars(args), **change})
        sub.baseline = change.get("baseline", False)
        predictor, network, cfg = _models(sub)
        tallies = sum_tallies(
            [evaluate_scene(sc, _run_tracker(sc, cfg, predictor, network, sub.baseline)) for sc in scenes]
        )
        a = tallies["all"]
        rows.append({"grid": args.grid, "arm": arm, "mota": a.mota, "fp_rate": a.fp_rate, "miss_rate": a.miss_rate, "ids_rate": a.ids_rate})
        log.info("%s: MOTA %.4f", arm, a.mota)
    path = out / f"{args.grid}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    write_config(out, "plotdata", args)
    print(f"wrote {len(rows)} rows to {path}")
    return 0


# --- parser ------------------------------------------------------------------


def _track_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="score hypotheses from ground truth")
    p.add_argument("--baseline", action="store_true", help="greedy center-distance tracker, no network")
    p.add_argument("--no-pred-boxes", action="store_true")
    p.add_argument("--detections-only", action="store_true", help="same as --no-pred-boxes")
    p.add_argument("--pred-boxes", type=int, default=None, metavar="K")
    p.add_argument("--point-frames", type=int, default=5)
    p.add_argument("--interaction", choices=["none", "global", "global-local"])
    p.add_argument("--traj-len", type=int, default=None)
    p.add_argument("--embedding", choices=["traj", "point", "both"])
    p.add_argument("--w", type=int, default=1, help="detected hypotheses per track")
    p.add_argument("--nms", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trajformer", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="replay the args of a config.json written by an earlier run")
        p.add_argument("--out")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = command("simulate", cmd_simulate, "generate synthetic scenes")
    p.add_argument("--objects", type=int, default=7)
    for cls in CLASSES:
        p.add_argument(f"--{cls}s", type=int, default=None)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--bounds", type=float, default=75.0)
    p.add_argument("--noise", default="centerpoint-like", choices=sorted(NOISE_PRESETS))
    p.add_argument("--inline-points", action="store_true")
    p.add_argument("--sidecar", action="store_true")

    p = command("train", cmd_train, "two-stage training")
    p.add_argument("--scenes", required=True)
    p.add_argument("--max-scenes", type=int)
    p.add_argument("--preset", default="desk", choices=sorted(TRAIN_PRESETS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--motion-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--points", type=int, default=32, help="sampled points per hypothesis")
    p.add_argument("--point-blocks", type=int, default=3)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--traj-len", type=int, default=10)
    p.add_argument("--pred-boxes", type=int, default=5)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--interaction", default="global-local", choices=["none", "global", "global-local"])
    p.add_argument("--embedding", default="both", choices=["traj", "point", "both"])
    p.add_argument("--motion-dim", type=int, default=64)
    p.add_argument("--point-frames", type=int, default=5)

    p = command("track", cmd_track, "run the tracker over scenes")
    p.add_argument("--scenes", required=True)
    p.add_argument("--max-scenes", type=int)
    _track_flags(p)

    p = command("eval", cmd_eval, "CLEAR-MOT metrics for track files")
    p.add_argument("--scenes", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--max-scenes", type=int)
    p.add_argument("--label", default="run")
    p.add_argument("--gate", type=float, default=2.0)
    p.add_argument("--iou-gate", type=float, default=None)
    p.add_argument("--min-points", type=int, default=0)

    p = command("gradcheck", cmd_gradcheck, "finite-difference checks of every learned block")
    p.add_argument("--blocks", nargs="*")

    p = command("plotdata", cmd_plotdata, "MOTA series over an ablation grid")
    p.add_argument("--scenes", required=True)
    p.add_argument("--max-scenes", type=int)
    p.add_argument("--grid", default="pred-boxes", choices=sorted(GRIDS))
    _track_flags(p)
    return ap


def parse(argv: list[str] | None) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        if doc.get("command") != args.command:
            raise CliError(f"{args.config} was written by {doc.get('command')!r}, not {args.command!r}")
        sub = ap._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**doc["args"])
        args = ap.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (CliError, GenerationError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
