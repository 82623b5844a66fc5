from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajformer.evaluation import EvaluationError, MotTally, compute_mota, match_frame, write_csv, write_report
from trajformer.io import gt_frames, load_scene
from trajformer.sim import LabeledBox
from trajformer.tracker import read_tracks

from conftest import car

FIXTURE = Path(__file__).parent / "fixtures" / "hand_trace"


def lb(i, x, y=0.0, t=0):
    return LabeledBox(i, "vehicle", car(x, y, t=t))


def hand_trace():
    return gt_frames(load_scene(FIXTURE / "scene.jsonl")), read_tracks(FIXTURE / "tracks" / "scene.tracks.jsonl")


def test_identical_sets_match_fully():
    gt = [lb(0, 0.0), lb(1, 10.0)]
    m = match_frame(gt, [lb(7, 0.0), lb(8, 10.0)])
    assert m.pairs == [(0, 7), (1, 8)]
    assert m.unmatched_gt == [] and m.unmatched_tracks == []


def test_lone_gt_is_a_miss():
    tally = compute_mota({0: [lb(0, 0.0)]}, {})["vehicle"]
    assert (tally.gt, tally.miss, tally.fp) == (1, 1, 0)


def test_crossing_keeps_previous_pairing():
    # two tracks equidistant from both objects: continuation decides
    gt = [lb(0, 0.0, 0.5), lb(1, 0.0, -0.5)]
    tracks = [lb(10, 0.0, 0.0), lb(11, 0.0, 0.0)]
    assert match_frame(gt, tracks, previous={0: 11, 1: 10}).pairs == [(0, 11), (1, 10)]
    assert match_frame(gt, tracks).pairs == [(0, 10), (1, 11)]


def test_perfect_tracks():
    frames = {t: [lb(0, 0.5 * t), lb(1, 20.0)] for t in range(5)}
    tracks = {t: [lb(3, 0.5 * t), lb(4, 20.0)] for t in range(5)}
    a = compute_mota(frames, tracks)["all"]
    assert a.mota == 1.0 and a.fp_rate == a.miss_rate == a.ids_rate == 0.0


def test_hand_trace_tally():
    a = compute_mota(*hand_trace())["all"]
    assert (a.gt, a.miss, a.ids, a.fp) == (6, 1, 1, 0)
    assert round(a.mota, 3) == 0.667


@settings(max_examples=30)
@given(st.permutations(range(4)))
def test_mota_relabeling_invariant(perm):
    gt, tracks = hand_trace()
    mapping = dict(zip(range(4), perm))
    relabeled = {t: [LabeledBox(mapping[b.id], b.cls, b.box) for b in bs] for t, bs in tracks.items()}
    assert compute_mota(gt, relabeled)["all"] == compute_mota(gt, tracks)["all"]


def test_fp_and_iou_gate():
    gt = {0: [lb(0, 0.0)]}
    tracks = {0: [lb(5, 1.5)]}
    assert compute_mota(gt, tracks)["all"].fp == 0
    strict = compute_mota(gt, tracks, iou_gate=0.7)["all"]
    assert (strict.fp, strict.miss) == (1, 1)


def test_ignored_gt_not_counted():
    gt = {0: [lb(0, 0.0), lb(1, 30.0)]}
    a = compute_mota(gt, {0: [lb(5, 30.0)]}, ignore={0: {0, 1}})["all"]
    assert (a.gt, a.miss, a.fp, a.matches) == (0, 0, 0, 0)


def test_stray_frames_rejected():
    with pytest.raises(EvaluationError):
        compute_mota({0: []}, {3: [lb(0, 0.0)]})


def test_tally_arithmetic():
    s = MotTally(4, 1, 0, 0, 3) + MotTally(2, 0, 1, 1, 1)
    assert s == MotTally(6, 1, 1, 1, 4)
    assert s.mota == pytest.approx(0.5)
    assert MotTally().mota == 1.0


def test_reports(tmp_path):
    tallies = compute_mota(*hand_trace())
    write_report(tmp_path / "m.json", tallies, {"label": "x"})
    write_csv(tmp_path / "m.csv", [("x", tallies)])
    assert '"mota"' in (tmp_path / "m.json").read_text()
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 1 + 4
