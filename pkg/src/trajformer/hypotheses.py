"""Trajectory hypotheses: each live track linked to predicted and detected candidate boxes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxState, bev_distance
from .sim import LabeledBox, one_hot

PREDICTED, DETECTED, ZERO_PAD = "predicted", "detected", "zero"

DEFAULT_MAX_DIST = {"vehicle": 2.0, "pedestrian": 0.5, "cyclist": 1.0}


class IntegrityError(ValueError):
    pass


@dataclass
class Trajectory:
    track_id: int
    cls: str
    boxes: list[BoxState]
    birth: int
    predictions: dict[int, list[BoxState]] = field(default_factory=dict)
    score: float = 1.0
    max_len: int = 15

    @property
    def last(self) -> BoxState:
        return self.boxes[-1]

    def append(self, box: BoxState) -> None:
        if self.boxes and box.t != self.boxes[-1].t + 1:
            raise IntegrityError(f"track {self.track_id}: frame {box.t} does not follow {self.boxes[-1].t}")
        self.boxes.append(box)
        del self.boxes[: max(0, len(self.boxes) - self.max_len)]

    def cache_prediction(self, t: int, boxes: list[BoxState], t_f: int) -> None:
        self.predictions[t] = list(boxes)
        for k in [k for k in self.predictions if k <= t - t_f]:
            del self.predictions[k]

    def reference_pose(self, t: int, use_prediction: bool = True) -> BoxState:
        """Lag-1 predicted pose at ``t`` when available, else the last observed box."""
        cached = self.predictions.get(t - 1)
        if use_prediction and cached:
            return cached[0]
        return self.last


@dataclass(frozen=True)
class Provenance:
    kind: str
    lag: int = 0
    det_id: int | None = None

    def rank(self, t_f: int) -> int:
        """Tie-break order: detected, predicted by increasing lag, zero pad."""
        if self.kind == DETECTED:
            return 0
        if self.kind == PREDICTED:
            return self.lag
        return t_f + 1


@dataclass
class Hypothesis:
    track_id: int
    cls: str
    candidate: BoxState
    provenance: Provenance
    omega: np.ndarray  # [T_h + 1, 8] world-frame geometry + time offset
    omega_mask: np.ndarray  # [T_h + 1] bool
    history_ref: BoxState  # owner's last box; used to normalize sentinel candidates

    @property
    def class_vector(self) -> np.ndarray:
        return one_hot(self.cls)


def collect_predicted_candidates(traj: Trajectory, t: int, t_f: int) -> list[tuple[BoxState, int]]:
    """Boxes for frame ``t`` predicted at frames ``t-1 .. t-T_f``, with their source lag.

    A lag whose prediction does not exist (the track is too young) falls back to
    the most recent prediction for ``t``; with none at all, the zero sentinel.
    """
    found: dict[int, BoxState] = {}
    for j in range(1, t_f + 1):
        cached = traj.predictions.get(t - j)
        if cached is not None and len(cached) >= j:
            found[j] = cached[j - 1].with_(t=t)
    out = []
    for j in range(1, t_f + 1):
        if j in found:
            out.append((found[j], j))
        elif found:
            lag = min(found)
            out.append((found[lag], lag))
        else:
            out.append((BoxState.sentinel(t), j))
    return out


def nearest_detections(
    traj: Trajectory,
    detections: list[LabeledBox],
    t: int,
    w: int,
    max_dist: dict[str, float] | None = None,
    exclude: set[int] = frozenset(),
    use_prediction: bool = True,
) -> list[LabeledBox | None]:
    """Up to ``w`` same-class detections within the class gate, nearest first; ``None`` pads."""
    gate = (max_dist or DEFAULT_MAX_DIST)[traj.cls]
    ref = traj.reference_pose(t, use_prediction)
    ranked = []
    for d in detections:
        if d.cls != traj.cls or d.id in exclude:
            continue
        dist = bev_distance(ref, d.box)
        if dist <= gate:
            ranked.append((dist, d.id, d))
    ranked.sort(key=lambda r: (r[0], r[1]))
    picked: list[LabeledBox | None] = [r[2] for r in ranked[:w]]
    return picked + [None] * (w - len(picked))


def box_sequence(traj: Trajectory, candidate: BoxState, t: int, t_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw Omega_B row: last ``t_h`` history boxes (front zero-padded) then the candidate."""
    rows = np.zeros((t_h + 1, 8))
    mask = np.zeros(t_h + 1, dtype=bool)
    recent = traj.boxes[-t_h:]
    start = t_h - len(recent)
    for k, b in enumerate(recent):
        rows[start + k, :7] = b.geometry()
        rows[start + k, 7] = b.t - t
    mask[:t_h] = np.arange(t_h) >= start
    if not candidate.is_sentinel:
        rows[t_h, :7] = candidate.geometry()
    mask[t_h] = True
    return rows, mask


def build_hypotheses(
    trajs: list[Trajectory],
    detections: list[LabeledBox],
    t: int,
    t_f: int = 5,
    w: int = 1,
    t_h: int = 10,
    max_dist: dict[str, float] | None = None,
    assignment: dict[int, int] | None = None,
    use_prediction: bool = True,
) -> list[Hypothesis]:
    """``N * (t_f + w)`` hypotheses in track order, predicted candidates first.

    With ``assignment`` (track id -> detection id, from greedy matching) the
    first detected slot holds the assigned detection and any further slots the
    nearest remaining ones.
    """
    ids = [tr.track_id for tr in trajs]
    if len(set(ids)) != len(ids):
        raise IntegrityError("duplicate track ids")
    by_id = {d.id: d for d in detections}
    out: list[Hypothesis] = []
    for tr in sorted(trajs, key=lambda x: x.track_id):
        cands: list[tuple[BoxState, Provenance]] = []
        for box, lag in collect_predicted_candidates(tr, t, t_f):
            cands.append((box, Provenance(PREDICTED, lag)))
        if assignment is not None:
            first = by_id.get(assignment[tr.track_id]) if tr.track_id in assignment else None
            rest = nearest_detections(
                tr, detections, t, w - 1, max_dist, exclude={first.id} if first else set(), use_prediction=use_prediction
            ) if w > 1 else []
            dets = [first] + rest
        else:
            dets = nearest_detections(tr, detections, t, w, max_dist, use_prediction=use_prediction)
        for d in dets:
            if d is None:
                cands.append((BoxState.sentinel(t), Provenance(ZERO_PAD)))
            else:
                cands.append((d.box, Provenance(DETECTED, det_id=d.id)))
        for box, prov in cands:
            rows, mask = box_sequence(tr, box, t, t_h)
            out.append(Hypothesis(tr.track_id, tr.cls, box, prov, rows, mask, tr.last))
    return out


def grouping(hyps: list[Hypothesis]) -> tuple[list[int], np.ndarray]:
    """Track ids in order and an ``[N, G]`` index array partitioning the hypotheses."""
    groups: dict[int, list[int]] = {}
    for i, h in enumerate(hyps):
        groups.setdefault(h.track_id, []).append(i)
    sizes = {len(g) for g in groups.values()}
    if len(sizes) > 1:
        raise IntegrityError(f"unequal hypothesis group sizes {sorted(sizes)}")
    ids = list(groups)
    arr = np.array([groups[k] for k in ids], dtype=np.int64).reshape(len(ids), -1)
    return ids, arr


def augment_hypotheses(
    generated: list[Hypothesis],
    rng: np.random.Generator,
    center_jitter: float = 0.5,
    heading_jitter: float = 0.1,
    size_jitter: float = 0.05,
    relative_center: bool = False,
) -> list[Hypothesis]:
    """One jittered copy of each generated hypothesis; sentinels pass through unchanged.

    Centers move by up to ``center_jitter`` meters per axis.  With
    ``relative_center`` the reach is that fraction of the box's BEV diagonal
    instead, so every class sees copies on both sides of its label threshold.
    """
    out = []
    for h in generated:
        draw = rng.uniform(-1.0, 1.0, size=6)
        if h.candidate.is_sentinel:
            out.append(_copy(h, h.candidate, h.provenance))
            continue
        b = h.candidate
        reach = center_jitter * math.hypot(b.l, b.w) if relative_center else center_jitter
        box = BoxState(
            b.x + reach * draw[0],
            b.y + reach * draw[1],
            b.z,
            b.l * (1.0 + size_jitter * draw[2]),
            b.w * (1.0 + size_jitter * draw[3]),
            b.h * (1.0 + size_jitter * draw[4]),
            b.heading + heading_jitter * draw[5],
            t=b.t,
            score=b.score,
        )
        out.append(_copy(h, box, h.provenance))
    return out


def _copy(h: Hypothesis, box: BoxState, prov: Provenance) -> Hypothesis:
    rows = h.omega.copy()
    rows[-1, :7] = 0.0 if box.is_sentinel else box.geometry()
    return Hypothesis(h.track_id, h.cls, box, prov, rows, h.omega_mask.copy(), h.history_ref)
