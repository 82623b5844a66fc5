"""Two-stage training: the motion predictor first, then the frozen-predictor hypothesis scorer."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import HypothesisBatch, build_batch
from .geometry import BoxState, bev_distance, bev_iou
from .hypotheses import (
    DETECTED,
    PREDICTED,
    Hypothesis,
    Trajectory,
    augment_hypotheses,
    build_hypotheses,
    grouping,
)
from .interaction import encode_residual
from .motion import MotionPredictor, future_targets, history_window, motion_loss
from .network import NetworkConfig, ScoringNetwork, build_models
from .numerics import Adam, ParamStore, Tensor, bce_with_logits, load_checkpoint, mul, no_grad, save_checkpoint, smooth_l1
from .numerics.tensor import _stable_sigmoid
from .sim import Scene
from .tracker import TrackerConfig, greedy_match

log = logging.getLogger(__name__)

AUGMENTED = "augmented"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 8  # frames per optimizer step (stage 2)
    epochs: int = 40
    motion_epochs: int = 15
    motion_batch: int = 64
    motion_lr: float = 1e-3
    reg_weight: float = 1.0
    history_sigma: float = 0.2  # center jitter on training histories, standing in for refined boxes
    heading_sigma: float = 0.03
    # share of training tracks whose whole history is displaced, so self-consistent but wrong
    # predictions show up as negatives; the offset reach is a fraction of the box diagonal
    drift_prob: float = 0.5
    drift_frac: float = 0.5
    jitter_frac: float = 0.4  # augmented-copy center reach, fraction of the BEV diagonal
    aug_heading: float = 0.2  # augmented-copy heading reach, radians
    aug_size: float = 0.1  # augmented-copy relative size reach
    positive_iou: float = 0.5  # vehicle label threshold
    positive_dist: float = 0.5  # pedestrian/cyclist label threshold, meters
    frame_stride: int = 1
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


TRAIN_PRESETS = {
    "paper": dict(lr=1e-3, batch=4, epochs=6),
    "desk": dict(lr=1e-3, batch=8, epochs=40),
    "overfit": dict(lr=1e-3, batch=1, epochs=200, history_sigma=0.0, heading_sigma=0.0, drift_prob=0.0),
}


def train_preset(name: str, **overrides) -> TrainConfig:
    if name not in TRAIN_PRESETS:
        raise ValueError(f"unknown training preset {name!r}; choose from {sorted(TRAIN_PRESETS)}")
    return TrainConfig(**{**TRAIN_PRESETS[name], **overrides})


def param_hash(store: ParamStore, prefix: str) -> str:
    h = hashlib.sha256()
    for name in sorted(store.named(prefix)):
        h.update(name.encode())
        h.update(np.ascontiguousarray(store[name].data).tobytes())
    return h.hexdigest()


# --- stage 1 -----------------------------------------------------------------


@dataclass
class MotionData:
    rows: np.ndarray  # [S, T_h, 8]
    mask: np.ndarray  # [S, T_h]
    target: np.ndarray  # [S, T_f, 3]
    target_mask: np.ndarray  # [S, T_f]


def motion_samples(scenes: list[Scene], t_h: int, t_f: int) -> MotionData:
    """Every (object, frame) window with at least one future step, from GT tracks."""
    rows, mask, target, tmask = [], [], [], []
    for sc in scenes:
        for _, (_, boxes) in sorted(sc.gt_tracks().items()):
            for e in range(len(boxes) - 1):
                w = history_window(boxes[max(0, e - t_h + 1) : e + 1], t_h)
                fut = list(boxes[e + 1 : e + 1 + t_f])
                tg, m = future_targets(w.ref, fut + [None] * (t_f - len(fut)), t_f)
                rows.append(w.rows)
                mask.append(w.mask)
                target.append(tg)
                tmask.append(m)
    if not rows:
        raise TrainingError("no motion training windows; scenes need at least two frames")
    return MotionData(np.array(rows), np.array(mask), np.array(target), np.array(tmask))


def train_motion(predictor: MotionPredictor, store: ParamStore, data: MotionData, cfg: TrainConfig) -> list[dict]:
    params = store.named(predictor.prefix)
    opt = Adam(params, lr=cfg.motion_lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    n = len(data.rows)
    history = []
    for epoch in range(cfg.motion_epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.motion_batch):
            b = perm[start : start + cfg.motion_batch]
            opt.zero_grad()
            loss = motion_loss(predictor(data.rows[b], data.mask[b]), data.target[b], data.target_mask[b])
            _check_finite(loss.item(), epoch, start // cfg.motion_batch, b.tolist(), None)
            loss.backward()
            opt.step()
            total += loss.item() * len(b)
        history.append({"epoch": epoch + 1, "loss": total / n})
        log.info("motion epoch %d loss %.5f", epoch + 1, total / n)
    return history


def motion_center_error(predictor, scenes: list[Scene], steps: int = 5) -> float:
    """Mean center error (m) over the first ``steps`` predicted frames.

    Only windows with a full history and a full ``steps``-frame future count.
    """
    d = motion_samples(scenes, predictor.t_h, predictor.t_f)
    keep = d.mask.all(axis=1) & d.target_mask[:, :steps].all(axis=1)
    with no_grad():
        pred = predictor(d.rows[keep], d.mask[keep]).data[:, :steps]
    err = np.linalg.norm(pred[..., :2] - d.target[keep][:, :steps, :2], axis=-1)
    return float(err.mean())


# --- stage 2 -----------------------------------------------------------------


@dataclass
class Sample:
    key: tuple[int, int]  # (scene index, frame)
    batch: HypothesisBatch
    labels: np.ndarray  # [M] 0/1
    reg_target: np.ndarray  # [M, 7], zeros for negatives
    kinds: list[str]


def is_positive(cand: BoxState, gt: BoxState, cls: str, iou: float = 0.5, dist: float = 0.5) -> bool:
    """Vehicles: BEV IoU >= ``iou``; pedestrians and cyclists: center distance <= ``dist`` m."""
    if cand.is_sentinel:
        return False
    if cls == "vehicle":
        return bev_iou(cand, gt) >= iou
    return bev_distance(cand, gt) <= dist


def _noisy(b: BoxState, rng: np.random.Generator, sigma: float, sigma_h: float) -> BoxState:
    if sigma == 0 and sigma_h == 0:
        return b
    d = rng.normal(size=3)
    return b.with_(x=b.x + sigma * d[0], y=b.y + sigma * d[1], heading=b.heading + sigma_h * d[2])


def _training_tracks(scene: Scene, t: int, predictor, ncfg: NetworkConfig, tcfg: TrainConfig, rng) -> list[Trajectory]:
    """One track per GT object, born a random number of frames back, with jittered history boxes.

    A ``drift_prob`` share of tracks has its history displaced by one common offset.
    """
    tracks = []
    for gid, (cls, boxes) in sorted(scene.gt_tracks().items()):
        age = int(rng.integers(1, ncfg.t_h + ncfg.t_f + 1))
        birth = max(0, t - age)
        drifted = rng.random() < tcfg.drift_prob
        offset = rng.uniform(-1.0, 1.0, size=2) * tcfg.drift_frac * math.hypot(boxes[0].l, boxes[0].w)
        tr = Trajectory(gid, cls, [], birth=birth, max_len=ncfg.t_h + ncfg.t_f)
        for k in range(birth, t):
            b = _noisy(boxes[k], rng, tcfg.history_sigma, tcfg.heading_sigma)
            if drifted:
                b = b.with_(x=b.x + offset[0], y=b.y + offset[1])
            tr.boxes.append(b)
        tracks.append(tr)
    # prediction caches for the last t_f frames, computed with the frozen predictor
    for k in range(max(0, t - ncfg.t_f), t):
        alive = [tr for tr in tracks if tr.birth <= k]
        if not alive:
            continue
        hist = [[b for b in tr.boxes if b.t <= k] for tr in alive]
        for tr, p in zip(alive, predictor.predict(hist)):
            tr.cache_prediction(k, p.boxes, ncfg.t_f)
    return tracks


def _stack_cloud(scene: Scene, t: int, frames: int) -> np.ndarray:
    parts = []
    for k in range(max(0, t - frames + 1), t + 1):
        pts = scene.frames[k].points
        parts.append(np.column_stack([pts, np.full(len(pts), float(k - t))]))
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, 4))


def frame_sample(
    scene: Scene,
    scene_index: int,
    t: int,
    predictor,
    ncfg: NetworkConfig,
    trk: TrackerConfig,
    tcfg: TrainConfig,
) -> Sample | None:
    """Training hypotheses at frame ``t``: per track 1 predicted + 1 detected + 2 jittered copies."""
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 5, scene_index, t]))
    tracks = _training_tracks(scene, t, predictor, ncfg, tcfg, rng)
    if not tracks:
        return None
    dets = scene.frames[t].detections
    assignment = greedy_match(tracks, dets, trk.max_dist, t)
    full = build_hypotheses(tracks, dets, t, ncfg.t_f, 1, ncfg.t_h, trk.max_dist, assignment)
    per = ncfg.t_f + 1
    generated: list[Hypothesis] = []
    for r in range(len(tracks)):
        group = full[r * per : (r + 1) * per]
        lag = int(rng.integers(1, ncfg.t_f + 1))
        generated.extend([group[lag - 1], group[-1]])
    augmented = augment_hypotheses(generated, rng, tcfg.jitter_frac, tcfg.aug_heading, tcfg.aug_size, relative_center=True)
    hyps: list[Hypothesis] = []
    for r in range(len(tracks)):
        hyps.extend(generated[2 * r : 2 * r + 2] + augmented[2 * r : 2 * r + 2])
    _, groups = grouping(hyps)
    gt_now = {g.id: g.box for g in scene.frames[t].gt}
    labels = np.zeros(len(hyps))
    reg = np.zeros((len(hyps), 7))
    for i, h in enumerate(hyps):
        target = gt_now.get(h.track_id)
        if target is not None and is_positive(h.candidate, target, h.cls, tcfg.positive_iou, tcfg.positive_dist):
            labels[i] = 1.0
            reg[i] = encode_residual(target, h.candidate)
    cloud = _stack_cloud(scene, t, trk.point_frames)
    batch = build_batch(hyps, cloud, groups, ncfg.y_count, ncfg.t_h, tcfg.seed, t)
    # every group is (generated predicted, generated detected, copy, copy)
    kinds = [AUGMENTED if i % 4 >= 2 else h.provenance.kind for i, h in enumerate(hyps)]
    return Sample((scene_index, t), batch, labels, reg, kinds)


def stage2_samples(scenes, predictor, ncfg: NetworkConfig, trk: TrackerConfig, tcfg: TrainConfig) -> list[Sample]:
    out = []
    for si, sc in enumerate(scenes):
        for t in range(1, len(sc.frames), tcfg.frame_stride):
            s = frame_sample(sc, si, t, predictor, ncfg, trk, tcfg)
            if s is not None:
                out.append(s)
    return out


@dataclass
class LossParts:
    total: Tensor
    conf: float
    reg: float


def scoring_loss(network: ScoringNetwork, sample: Sample, reg_weight: float = 1.0) -> LossParts:
    """BCE on every hypothesis plus smooth-L1 box residuals on positives."""
    logits, res = network(sample.batch)
    conf = bce_with_logits(logits, sample.labels)
    pos = sample.labels > 0
    if pos.any():
        w = np.zeros(res.shape)
        w[pos] = 1.0 / pos.sum()
        reg = mul(smooth_l1(res - Tensor(sample.reg_target)), w).sum()
        total = conf + mul(reg, reg_weight)
        return LossParts(total, conf.item(), reg.item())
    return LossParts(conf, conf.item(), 0.0)


def _check_finite(value: float, epoch: int, batch_id: int, keys, out_dir: Path | None) -> None:
    if math.isfinite(value):
        return
    info = {"epoch": epoch + 1, "batch_id": batch_id, "samples": keys}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "nan_batch.json").write_text(json.dumps(info, indent=2))
    raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {batch_id}: {info}")


def train_scorer(
    network: ScoringNetwork,
    store: ParamStore,
    samples: list[Sample],
    cfg: TrainConfig,
    out_dir: Path | None = None,
) -> list[dict]:
    """Stage 2 with the motion predictor frozen; returns per-epoch mean losses."""
    store.freeze("motion.")
    before = param_hash(store, "motion.")
    params = store.trainable()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(samples))
        tot = conf = reg = 0.0
        for b, start in enumerate(range(0, len(samples), cfg.batch)):
            chunk = [samples[i] for i in perm[start : start + cfg.batch]]
            opt.zero_grad()
            for s in chunk:
                parts = scoring_loss(network, s, cfg.reg_weight)
                _check_finite(parts.total.item(), epoch, b, [list(c.key) for c in chunk], out_dir)
                mul(parts.total, 1.0 / len(chunk)).backward()
                tot += parts.total.item()
                conf += parts.conf
                reg += parts.reg
            opt.step()
        n = max(len(samples), 1)
        history.append({"epoch": epoch + 1, "loss": tot / n, "conf": conf / n, "reg": reg / n})
        log.info("scorer epoch %d loss %.5f (conf %.5f reg %.5f)", epoch + 1, tot / n, conf / n, reg / n)
    if param_hash(store, "motion.") != before:
        raise TrainingError("frozen motion predictor parameters changed during stage 2")
    return history


def evaluate_scores(network: ScoringNetwork, samples: list[Sample]) -> dict:
    scores, labels = [], []
    for s in samples:
        with no_grad():
            logits, _ = network(s.batch)
        scores.append(_stable_sigmoid(logits.data))
        labels.append(s.labels)
    y = np.concatenate(labels) if labels else np.zeros(0)
    p = np.concatenate(scores) if scores else np.zeros(0)
    return {"auc": auc(y, p), "positive_fraction": float(y.mean()) if len(y) else 0.0, "count": int(len(y))}


def auc(labels: np.ndarray, scores: np.ndarray) -> float:
    from sklearn.metrics import roc_auc_score

    labels = np.asarray(labels)
    if labels.min(initial=0) == labels.max(initial=0):
        return float("nan")
    return float(roc_auc_score(labels, scores))


def label_statistics(samples: list[Sample]) -> dict[str, float]:
    """Positive fraction per provenance kind (jittered copies counted apart)."""
    out = {}
    for kind in (PREDICTED, DETECTED, AUGMENTED):
        vals = [lab for s in samples for lab, k in zip(s.labels, s.kinds) if k == kind]
        out[kind] = float(np.mean(vals)) if vals else float("nan")
    return out


# --- end to end --------------------------------------------------------------


@dataclass
class TrainResult:
    store: ParamStore
    predictor: MotionPredictor
    network: ScoringNetwork
    motion_history: list[dict] = field(default_factory=list)
    scorer_history: list[dict] = field(default_factory=list)


def train(
    scenes: list[Scene],
    ncfg: NetworkConfig,
    tcfg: TrainConfig,
    trk: TrackerConfig | None = None,
    out_dir=None,
) -> TrainResult:
    trk = trk or TrackerConfig(t_h=ncfg.t_h, t_f=ncfg.t_f)
    out = Path(out_dir) if out_dir is not None else None
    store, predictor, network = build_models(ncfg)
    motion_hist = train_motion(predictor, store, motion_samples(scenes, ncfg.t_h, ncfg.horizon), tcfg)
    samples = stage2_samples(scenes, predictor, ncfg, trk, tcfg)
    scorer_hist = train_scorer(network, store, samples, tcfg, out)
    result = TrainResult(store, predictor, network, motion_hist, scorer_hist)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "losses_stage1.json").write_text(json.dumps(motion_hist, indent=2) + "\n")
        (out / "losses_stage2.json").write_text(json.dumps(scorer_hist, indent=2) + "\n")
        save_model(out / "model.npz", result, tcfg)
    return result


def save_model(path, result: TrainResult, tcfg: TrainConfig | None = None) -> Path:
    meta = {"network": result.network.config.to_dict(), "train": tcfg.to_dict() if tcfg else None}
    return save_checkpoint(path, result.store.snapshot(), meta)


def load_model(path) -> tuple[ParamStore, MotionPredictor, ScoringNetwork, dict]:
    params, meta = load_checkpoint(path)
    if "network" not in meta:
        raise ValueError(f"{path}: checkpoint lacks a network config")
    ncfg = NetworkConfig(**meta["network"])
    store, predictor, network = build_models(ncfg)
    store.load(params)
    return store, predictor, network, meta
