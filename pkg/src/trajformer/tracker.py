"""Per-frame tracking: match, hypothesize, score, select, refine, and manage track life cycles."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from .encoder import HypothesisBatch, build_batch
from .geometry import BoxState, bev_distance, bev_iou
from .hypotheses import (
    DEFAULT_MAX_DIST,
    DETECTED,
    PREDICTED,
    Hypothesis,
    IntegrityError,
    Provenance,
    Trajectory,
    build_hypotheses,
    grouping,
)
from .interaction import MODES, decode_residual
from .sim import CLASSES, Frame, LabeledBox

TRACK_SCHEMA = "trajformer-tracks"
TRACK_SCHEMA_VERSION = 1


class SequencingError(RuntimeError):
    pass


@dataclass
class TrackerConfig:
    t_h: int = 10
    t_f: int = 5  # predicted boxes per track; 0 disables them
    w: int = 1
    max_dist: dict = field(default_factory=lambda: dict(DEFAULT_MAX_DIST))
    kill: dict = field(default_factory=lambda: {"vehicle": 0.7, "pedestrian": 0.6, "cyclist": 0.7})
    birth: dict = field(default_factory=lambda: {"vehicle": 0.8, "pedestrian": 0.72, "cyclist": 0.8})
    birth_overlap_iou: float = 0.1
    point_frames: int = 5
    interaction: str | None = None  # None keeps the network's own mode
    nms: bool = False
    nms_iou: float = 0.7
    nms_score: float = 0.1
    match_on_prediction: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("kill", "birth"):
            table = getattr(self, name)
            if set(table) != set(CLASSES) or any(not 0.0 <= v <= 1.0 for v in table.values()):
                raise ValueError(f"{name} thresholds need a value in [0, 1] for each of {CLASSES}")
        if not 0.0 <= self.birth_overlap_iou <= 1.0:
            raise ValueError("birth_overlap_iou must lie in [0, 1]")
        if self.t_f < 0 or self.w < 1 or self.t_h < 1 or self.point_frames < 1:
            raise ValueError("need t_f >= 0, w >= 1, t_h >= 1 and point_frames >= 1")
        if self.interaction is not None and self.interaction not in MODES:
            raise ValueError(f"interaction must be one of {MODES}")

    @property
    def group_size(self) -> int:
        return self.t_f + self.w

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrackOutput:
    track_id: int
    cls: str
    box: BoxState
    score: float
    provenance: str

    def record(self, t: int) -> dict:
        return {
            "schema": TRACK_SCHEMA,
            "version": TRACK_SCHEMA_VERSION,
            "frame": t,
            "track_id": self.track_id,
            "cls": self.cls,
            "box": [float(v) for v in self.box.geometry()],
            "score": float(self.score),
            "provenance": self.provenance,
        }


@dataclass
class FrameResult:
    t: int
    surviving: list[TrackOutput]
    killed: list[int]
    born: list[TrackOutput]
    provenance: dict[int, Provenance]
    scores: np.ndarray  # every hypothesis score this frame, in hypothesis order

    @property
    def tracks(self) -> list[TrackOutput]:
        """Everything reported at this frame: survivors and births, by track id."""
        return sorted(self.surviving + self.born, key=lambda o: o.track_id)

    def check(self) -> None:
        seen = [o.track_id for o in self.surviving] + self.killed + [o.track_id for o in self.born]
        if len(seen) != len(set(seen)):
            raise IntegrityError(f"frame {self.t}: a track id is in more than one result set")

    def records(self) -> list[dict]:
        return [o.record(self.t) for o in self.tracks]


# --- matching and selection -------------------------------------------------


def greedy_match(
    trajs: list[Trajectory],
    detections: list[LabeledBox],
    max_dist: dict[str, float] | None = None,
    t: int | None = None,
    use_prediction: bool = True,
) -> dict[int, int]:
    """Track id -> detection id by repeatedly taking the globally closest same-class pair.

    Distances are measured from each track's lag-1 predicted pose at ``t`` when
    one is cached, else from its last box.  Exact ties go to the lower track
    position, then the lower detection position.
    """
    gates = max_dist or DEFAULT_MAX_DIST
    if not trajs or not detections:
        return {}
    trajs = sorted(trajs, key=lambda tr: tr.track_id)
    refs = [tr.reference_pose(t, use_prediction) if t is not None else tr.last for tr in trajs]
    dist = np.full((len(trajs), len(detections)), np.inf)
    for i, (tr, ref) in enumerate(zip(trajs, refs)):
        for j, d in enumerate(detections):
            if d.cls == tr.cls:
                dd = bev_distance(ref, d.box)
                if dd <= gates[tr.cls]:
                    dist[i, j] = dd
    return {trajs[i].track_id: detections[j].id for i, j in greedy_pairs(dist)}


def greedy_pairs(dist: np.ndarray) -> list[tuple[int, int]]:
    """Greedy one-to-one assignment over a cost matrix; ``inf`` marks forbidden pairs."""
    dist = np.array(dist, dtype=np.float64)
    out = []
    while dist.size and np.isfinite(dist).any():
        i, j = np.unravel_index(np.argmin(dist), dist.shape)  # first minimum in row-major order
        out.append((int(i), int(j)))
        dist[i, :] = np.inf
        dist[:, j] = np.inf
    return out


def select_best(scores: np.ndarray, hyps: list[Hypothesis], groups: np.ndarray, t_f: int) -> np.ndarray:
    """Index of the chosen hypothesis per group row.

    Highest score wins; ties prefer detected, then predicted by increasing lag,
    then zero pads, then the lower index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    out = np.zeros(len(groups), dtype=np.int64)
    for r, row in enumerate(groups):
        if len(row) == 0:
            raise IntegrityError(f"group {r} has no hypotheses")
        out[r] = min(row, key=lambda i: (-scores[i], hyps[i].provenance.rank(t_f), i))
    return out


def nms(detections: list[LabeledBox], iou: float = 0.7, min_score: float = 0.1) -> list[LabeledBox]:
    """Class-wise greedy NMS; survivors keep their original ids and order."""
    keep: list[LabeledBox] = []
    cands = [d for d in detections if (d.box.score if d.box.score is not None else 1.0) >= min_score]
    cands.sort(key=lambda d: (-(d.box.score if d.box.score is not None else 1.0), d.id))
    for d in cands:
        if all(k.cls != d.cls or bev_iou(k.box, d.box) <= iou for k in keep):
            keep.append(d)
    kept = {d.id for d in keep}
    return [d for d in detections if d.id in kept]


# --- scorers -----------------------------------------------------------------


class Scorer(Protocol):
    def __call__(self, batch: HypothesisBatch, hyps: list[Hypothesis], frame: Frame) -> tuple[np.ndarray, np.ndarray | None]:
        ...


class NetworkScorer:
    def __init__(self, network, interaction: str | None = None):
        self.network = network
        self.interaction = interaction

    def __call__(self, batch, hyps, frame):
        return self.network.score(batch, self.interaction)


class DetectionScorer:
    """Greedy center-distance baseline: a matched detection scores 1 and is kept unrefined."""

    def __call__(self, batch, hyps, frame):
        return np.array([1.0 if h.provenance.kind == DETECTED else 0.0 for h in hyps]), None


class OracleScorer:
    """Scores 1 for the hypothesis closest to the owner's ground truth, 0 elsewhere.

    A track's owner is the GT object the track was following at the previous
    frame (nearest same-class GT to its last box, within ``gate``).
    """

    def __init__(self, frames: list[Frame], gate: float = 2.0):
        self.by_t = {fr.t: fr for fr in frames}
        self.gate = gate

    def __call__(self, batch, hyps, frame):
        scores = np.zeros(len(hyps))
        prev = self.by_t.get(frame.t - 1)
        now = {g.id: g for g in frame.gt}
        for row in batch.groups:
            h0 = hyps[row[0]]
            owner = _nearest_gt(h0.history_ref, h0.cls, prev.gt if prev else [], self.gate)
            if owner is None or owner.id not in now:
                continue
            target = now[owner.id].box
            live = [i for i in row if not hyps[i].candidate.is_sentinel]
            if not live:
                continue
            best = min(live, key=lambda i: (bev_distance(hyps[i].candidate, target), hyps[i].provenance.rank(len(row)), i))
            if bev_distance(hyps[best].candidate, target) <= self.gate:
                scores[best] = 1.0
        return scores, None


def _nearest_gt(box: BoxState, cls: str, gts: list[LabeledBox], gate: float) -> LabeledBox | None:
    best, best_d = None, gate
    for g in gts:
        if g.cls == cls:
            d = bev_distance(box, g.box)
            if d <= best_d:
                best, best_d = g, d
    return best


# --- the tracker -------------------------------------------------------------


def _detection_score(d: LabeledBox) -> float:
    return 1.0 if d.box.score is None else float(d.box.score)


def _provenance_label(p: Provenance) -> str:
    if p.kind == PREDICTED:
        return f"predicted:{p.lag}"
    if p.kind == DETECTED:
        return "detected"
    return p.kind


class Tracker:
    """Single-scene tracker state; call :meth:`step` once per frame in order."""

    def __init__(self, config: TrackerConfig, scorer, predictor, y_count: int = 32):
        self.config = config
        self.scorer = scorer
        self.predictor = predictor
        self.y_count = y_count
        horizon = getattr(predictor, "t_f", config.t_f)
        if config.t_f > horizon:
            raise ValueError(f"{config.t_f} predicted boxes need a predictor horizon >= {config.t_f}, got {horizon}")
        self.tracks: dict[int, Trajectory] = {}
        self.next_id = 0
        self.last_t: int | None = None
        self.clouds: deque[tuple[int, np.ndarray]] = deque(maxlen=config.point_frames)

    def _cloud(self, t: int) -> np.ndarray:
        """Stacked recent clouds with a relative-time channel."""
        parts = [np.column_stack([pts, np.full(len(pts), float(k - t))]) for k, pts in self.clouds]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, 4))

    def step(self, frame: Frame) -> FrameResult:
        c = self.config
        t = frame.t
        if self.last_t is not None and t != self.last_t + 1:
            raise SequencingError(f"frame {t} after frame {self.last_t}; frames must arrive consecutively")
        self.last_t = t
        self.clouds.append((t, np.asarray(frame.points, dtype=np.float64).reshape(-1, 3)))
        dets = nms(frame.detections, c.nms_iou, c.nms_score) if c.nms else list(frame.detections)

        live = [self.tracks[k] for k in sorted(self.tracks)]
        assignment = greedy_match(live, dets, c.max_dist, t, c.match_on_prediction)
        surviving: list[TrackOutput] = []
        killed: list[int] = []
        provenance: dict[int, Provenance] = {}
        scores = np.zeros(0)
        if live:
            hyps = build_hypotheses(live, dets, t, c.t_f, c.w, c.t_h, c.max_dist, assignment, c.match_on_prediction)
            ids, groups = grouping(hyps)
            batch = build_batch(hyps, self._cloud(t), groups, self.y_count, c.t_h, c.seed, t)
            scores, residuals = self.scorer(batch, hyps, frame)
            choices = select_best(scores, hyps, groups, c.t_f)
            for tid, i in zip(ids, choices):
                tr, h = self.tracks[tid], hyps[i]
                provenance[tid] = h.provenance
                s = float(scores[i])
                # a zero pad carries no box to extend the track with
                if s < c.kill[tr.cls] or h.candidate.is_sentinel:
                    killed.append(tid)
                    continue
                box = h.candidate if residuals is None else decode_residual(residuals[i], h.candidate)
                box = box.with_(t=t, score=s)
                tr.append(box)
                tr.score = s
                surviving.append(TrackOutput(tid, tr.cls, box, s, _provenance_label(h.provenance)))
            for tid in killed:
                del self.tracks[tid]

        born = self._births(dets, assignment, t)
        self._update_predictions(t)
        result = FrameResult(t, surviving, killed, born, provenance, np.asarray(scores))
        result.check()
        return result

    def _births(self, dets: list[LabeledBox], assignment: dict[int, int], t: int) -> list[TrackOutput]:
        c = self.config
        used = set(assignment.values())
        current = [tr.last for tr in self.tracks.values()]
        born = []
        for d in dets:
            if d.id in used or _detection_score(d) <= c.birth[d.cls]:
                continue
            if any(bev_iou(d.box, b) > c.birth_overlap_iou for b in current):
                continue
            tid = self.next_id
            self.next_id += 1
            box = d.box.with_(t=t)
            self.tracks[tid] = Trajectory(tid, d.cls, [box], birth=t, max_len=max(c.t_h, 1) + c.t_f)
            self.tracks[tid].score = _detection_score(d)
            born.append(TrackOutput(tid, d.cls, box, _detection_score(d), "birth"))
        return born

    def _update_predictions(self, t: int) -> None:
        if self.config.t_f == 0 or not self.tracks:
            return
        order = sorted(self.tracks)
        preds = self.predictor.predict([self.tracks[k].boxes for k in order])
        for k, p in zip(order, preds):
            self.tracks[k].cache_prediction(t, p.boxes, self.config.t_f)


def run_scene(tracker: Tracker, frames: list[Frame]) -> list[FrameResult]:
    return [tracker.step(fr) for fr in frames]


def write_tracks(path, results: list[FrameResult]) -> None:
    with open(path, "w") as fh:
        for r in results:
            for rec in r.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_tracks(path) -> dict[int, list[LabeledBox]]:
    """Frame -> reported tracks, as labeled boxes with the track id as ``id``."""
    out: dict[int, list[LabeledBox]] = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("schema") != TRACK_SCHEMA or rec.get("version") != TRACK_SCHEMA_VERSION:
                raise ValueError(f"unsupported track record schema {rec.get('schema')!r} v{rec.get('version')!r}")
            box = BoxState.from_array(rec["box"], t=rec["frame"], score=rec["score"])
            out.setdefault(rec["frame"], []).append(LabeledBox(rec["track_id"], rec["cls"], box))
    return out
