"""CLEAR-MOT counts (FP, Miss, IDS) and MOTA for track output against ground truth."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import bev_distance, bev_iou
from .sim import CLASSES, LabeledBox
from .tracker import greedy_pairs


class EvaluationError(ValueError):
    pass


@dataclass
class MotTally:
    gt: int = 0
    fp: int = 0
    miss: int = 0
    ids: int = 0
    matches: int = 0

    def __add__(self, other: "MotTally") -> "MotTally":
        return MotTally(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    def _rate(self, n: int) -> float:
        return n / self.gt if self.gt else 0.0

    @property
    def mota(self) -> float:
        if self.gt == 0:
            return 1.0 if self.fp == 0 else float("-inf")
        return 1.0 - (self.fp + self.miss + self.ids) / self.gt

    @property
    def fp_rate(self) -> float:
        return self._rate(self.fp)

    @property
    def miss_rate(self) -> float:
        return self._rate(self.miss)

    @property
    def ids_rate(self) -> float:
        return self._rate(self.ids)

    def to_dict(self) -> dict:
        return {
            **asdict(self),
            "mota": self.mota,
            "fp_rate": self.fp_rate,
            "miss_rate": self.miss_rate,
            "ids_rate": self.ids_rate,
        }


@dataclass
class FrameMatch:
    pairs: list[tuple[int, int]]  # (gt id, track id)
    unmatched_gt: list[int]
    unmatched_tracks: list[int]


def match_frame(
    gt: list[LabeledBox],
    tracks: list[LabeledBox],
    previous: dict[int, int] | None = None,
    gate: float = 2.0,
    iou_gate: float | None = None,
) -> FrameMatch:
    """Match one frame of one class.

    Last frame's GT-to-track pairs are kept first when they still pass the gate;
    the rest are matched greedily by center distance (or by 1 - IoU when
    ``iou_gate`` is set).
    """
    previous = previous or {}

    def ok(g: LabeledBox, tr: LabeledBox) -> bool:
        if iou_gate is not None:
            return bev_iou(g.box, tr.box) >= iou_gate
        return bev_distance(g.box, tr.box) <= gate

    def cost(g: LabeledBox, tr: LabeledBox) -> float:
        return 1.0 - bev_iou(g.box, tr.box) if iou_gate is not None else bev_distance(g.box, tr.box)

    by_track = {tr.id: tr for tr in tracks}
    pairs: list[tuple[int, int]] = []
    taken_gt, taken_tr = set(), set()
    for g in gt:
        tid = previous.get(g.id)
        if tid is not None and tid in by_track and tid not in taken_tr and ok(g, by_track[tid]):
            pairs.append((g.id, tid))
            taken_gt.add(g.id)
            taken_tr.add(tid)
    rest_g = [g for g in gt if g.id not in taken_gt]
    rest_t = [tr for tr in tracks if tr.id not in taken_tr]
    dist = np.full((len(rest_g), len(rest_t)), np.inf)
    for i, g in enumerate(rest_g):
        for j, tr in enumerate(rest_t):
            if ok(g, tr):
                dist[i, j] = cost(g, tr)
    for i, j in greedy_pairs(dist):
        pairs.append((rest_g[i].id, rest_t[j].id))
    gm = {p[0] for p in pairs}
    tm = {p[1] for p in pairs}
    return FrameMatch(
        sorted(pairs),
        [g.id for g in gt if g.id not in gm],
        [tr.id for tr in tracks if tr.id not in tm],
    )


def compute_mota(
    gt_frames: dict[int, list[LabeledBox]],
    track_frames: dict[int, list[LabeledBox]],
    gate: float = 2.0,
    iou_gate: float | None = None,
    ignore: dict[int, set[int]] | None = None,
) -> dict[str, MotTally]:
    """Per-class tallies plus an ``"all"`` total.

    An ID switch is a matched GT object whose track id differs from the last
    track it was ever matched to.  ``ignore`` maps frames to GT ids excluded
    from scoring (e.g. too few points); tracks matched to them are not FPs.
    """
    stray = sorted(set(track_frames) - set(gt_frames))
    if stray:
        raise EvaluationError(f"track output has frames {stray[:5]} absent from the ground truth")
    ignore = ignore or {}
    tallies = {c: MotTally() for c in CLASSES}
    last_match: dict[int, int] = {}
    previous: dict[str, dict[int, int]] = {c: {} for c in CLASSES}
    for t in sorted(gt_frames):
        skip = ignore.get(t, set())
        for c in CLASSES:
            g = [b for b in gt_frames[t] if b.cls == c]
            tr = [b for b in track_frames.get(t, []) if b.cls == c]
            m = match_frame(g, tr, previous[c], gate, iou_gate)
            previous[c] = dict(m.pairs)
            tally = tallies[c]
            tally.gt += sum(1 for b in g if b.id not in skip)
            tally.miss += sum(1 for gid in m.unmatched_gt if gid not in skip)
            tally.fp += len(m.unmatched_tracks)
            for gid, tid in m.pairs:
                if gid in skip:
                    continue
                tally.matches += 1
                if gid in last_match and last_match[gid] != tid:
                    tally.ids += 1
                last_match[gid] = tid
    total = MotTally()
    for c in CLASSES:
        total = total + tallies[c]
    return {**tallies, "all": total}


def sum_tallies(reports: list[dict[str, MotTally]]) -> dict[str, MotTally]:
    keys = list(CLASSES) + ["all"]
    out = {k: MotTally() for k in keys}
    for r in reports:
        for k in keys:
            out[k] = out[k] + r[k]
    return out


def write_report(path, tallies: dict[str, MotTally], meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, "metrics": {k: v.to_dict() for k, v in tallies.items()}}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


CSV_FIELDS = ["config", "class", "gt", "fp", "miss", "ids", "matches", "mota", "fp_rate", "miss_rate", "ids_rate"]


def write_csv(path, rows: list[tuple[str, dict[str, MotTally]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for config, tallies in rows:
            for cls, tally in tallies.items():
                w.writerow({"config": config, "class": cls, **tally.to_dict()})
