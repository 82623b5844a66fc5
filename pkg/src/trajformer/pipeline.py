"""Glue for running the tracker over scenes and scoring the result."""
from __future__ import annotations

from dataclasses import replace

from .evaluation import MotTally, compute_mota, sum_tallies
from .io import gt_frames, point_counts
from .sim import LabeledBox, Scene
from .tracker import FrameResult, NetworkScorer, OracleScorer, Tracker, TrackerConfig


def result_frames(results: list[FrameResult]) -> dict[int, list[LabeledBox]]:
    return {r.t: [LabeledBox(o.track_id, o.cls, o.box) for o in r.tracks] for r in results}


def make_tracker(scene: Scene, config: TrackerConfig, predictor, network=None, y_count: int | None = None) -> Tracker:
    """A network-scored tracker, or the ground-truth oracle when ``network`` is None."""
    if network is None:
        return Tracker(config, OracleScorer(scene.frames), predictor, y_count or 8)
    scorer = NetworkScorer(network, config.interaction)
    return Tracker(config, scorer, predictor, y_count or network.config.y_count)


def track_scene(scene: Scene, config: TrackerConfig, predictor, network=None) -> list[FrameResult]:
    tracker = make_tracker(scene, config, predictor, network)
    return [tracker.step(fr) for fr in scene.frames]


def ignore_sparse(scene: Scene, min_points: int) -> dict[int, set[int]]:
    """GT ids with fewer than ``min_points`` simulated points, per frame."""
    if min_points <= 0:
        return {}
    counts = point_counts(scene)
    return {fr.t: {g.id for g in fr.gt if counts[fr.t].get(g.id, 0) < min_points} for fr in scene.frames}


def evaluate_scene(scene: Scene, results: list[FrameResult], gate: float = 2.0, iou_gate=None, min_points: int = 0):
    return compute_mota(gt_frames(scene), result_frames(results), gate, iou_gate, ignore_sparse(scene, min_points))


def benchmark(scenes: list[Scene], config: TrackerConfig, predictor, network=None, **eval_kw) -> dict[str, MotTally]:
    """Track and evaluate every scene; tallies summed over scenes."""
    return sum_tallies([evaluate_scene(sc, track_scene(sc, config, predictor, network), **eval_kw) for sc in scenes])


def ablation(config: TrackerConfig, **changes) -> TrackerConfig:
    return replace(config, **changes)
