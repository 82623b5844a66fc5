"""Per-hypothesis embeddings: long-term box motion, short-term point appearance, fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoxState, crop_and_sample_points, relative_point_encoding, to_local, wrap_angle
from .hypotheses import Hypothesis, IntegrityError
from .numerics import AttentionBlock, Mlp, ParamStore, Tensor, broadcast_to, concat, masked_max, reshape
from .sim import CLASSES

POINT_FEATURES = 29  # 27 relative offsets + time offset + empty-crop flag
BOX_FEATURES = 8


def normalize_box_sequence(omega: np.ndarray, mask: np.ndarray, candidate: BoxState, history_ref: BoxState) -> np.ndarray:
    """Express a raw Omega_B row in the candidate's frame (the owner's last box for sentinels)."""
    ref = history_ref if candidate.is_sentinel else candidate
    out = np.zeros_like(omega)
    valid = np.asarray(mask, dtype=bool).copy()
    if candidate.is_sentinel:
        valid[-1] = False  # the all-zero candidate row stays literally zero
    rows = omega[valid]
    out[valid, 0:2] = to_local(rows[:, 0:2], ref)
    out[valid, 2] = rows[:, 2] - ref.z
    out[valid, 3:6] = rows[:, 3:6]
    out[valid, 6] = wrap_angle(rows[:, 6] - ref.heading)
    out[valid, 7] = rows[:, 7]
    return out


def point_features(cloud: np.ndarray, box: BoxState, y_count: int, rng: np.random.Generator) -> np.ndarray:
    sample = crop_and_sample_points(cloud, box, y_count, rng)
    enc = relative_point_encoding(sample.points, box)
    flag = np.full((y_count, 1), 1.0 if sample.empty else 0.0)
    return np.concatenate([enc, flag], axis=1)


@dataclass
class HypothesisBatch:
    omega: np.ndarray  # [M, T_h+1, 8] candidate-frame box sequences
    omega_mask: np.ndarray  # [M, T_h+1]
    points: np.ndarray  # [M, Y, 29]
    classes: np.ndarray  # [M, n_classes]
    groups: np.ndarray  # [N, G]
    candidates: list[BoxState]

    @property
    def size(self) -> int:
        return len(self.candidates)

    @property
    def sentinel(self) -> np.ndarray:
        return np.array([c.is_sentinel for c in self.candidates], dtype=bool)


def build_batch(
    hyps: list[Hypothesis],
    cloud: np.ndarray,
    groups: np.ndarray,
    y_count: int,
    t_h: int,
    seed: int = 0,
    t: int = 0,
) -> HypothesisBatch:
    """Materialize encoder inputs; point sampling is seeded per (seed, frame, track, slot)."""
    m = len(hyps)
    omega = np.zeros((m, t_h + 1, BOX_FEATURES))
    omask = np.zeros((m, t_h + 1), dtype=bool)
    pts = np.zeros((m, y_count, POINT_FEATURES))
    cls = np.zeros((m, len(CLASSES)))
    slot: dict[int, int] = {}
    for i, h in enumerate(hyps):
        omega[i] = normalize_box_sequence(h.omega, h.omega_mask, h.candidate, h.history_ref)
        omask[i] = h.omega_mask
        k = slot.get(h.track_id, 0)
        slot[h.track_id] = k + 1
        rng = np.random.default_rng(np.random.SeedSequence([seed, t, h.track_id, k]))
        pts[i] = point_features(cloud, h.candidate, y_count, rng)
        cls[i] = h.class_vector
    return HypothesisBatch(omega, omask, pts, cls, groups, [h.candidate for h in hyps])


class MotionEmbedding:
    """Per-frame MLP over box rows, then a masked max-pool over time."""

    def __init__(self, store: ParamStore, dim: int, prefix: str = "enc.motion"):
        self.dim = dim
        self.mlp = Mlp(store, prefix, (BOX_FEATURES, dim, dim))

    def __call__(self, omega: np.ndarray, mask: np.ndarray) -> Tensor:
        if len(omega) == 0:
            return Tensor(np.zeros((0, self.dim)))
        return masked_max(self.mlp(Tensor(omega)), mask, axis=-2)


class AppearanceEncoder:
    """Point tokens refined by self-attention, summarized by a learned query via cross-attention."""

    def __init__(self, store: ParamStore, dim: int, heads: int, blocks: int = 3, prefix: str = "enc.app"):
        self.dim = dim
        self.input = Mlp(store, f"{prefix}.in", (POINT_FEATURES, dim, dim))
        self.query = store.zeros(f"{prefix}.query", (1, 1, dim))
        self.self_blocks = [AttentionBlock(store, f"{prefix}.self{i}", dim, heads) for i in range(blocks)]
        self.cross_blocks = [AttentionBlock(store, f"{prefix}.cross{i}", dim, heads) for i in range(blocks)]

    def tokens(self, points: np.ndarray) -> Tensor:
        return self.input(Tensor(points))

    def aggregate(self, tokens: Tensor) -> Tensor:
        m = tokens.shape[0]
        query = broadcast_to(self.query, (m, 1, self.dim))
        for sa, ca in zip(self.self_blocks, self.cross_blocks):
            tokens = sa(tokens)
            query = ca(query, tokens)
        return reshape(query, (m, self.dim))

    def __call__(self, points: np.ndarray) -> Tensor:
        if len(points) == 0:
            return Tensor(np.zeros((0, self.dim)))
        return self.aggregate(self.tokens(points))


class Fusion:
    def __init__(self, store: ParamStore, dim: int, n_classes: int = len(CLASSES), prefix: str = "enc.fuse"):
        self.dim = dim
        self.mlp = Mlp(store, prefix, (2 * dim + n_classes, dim, dim))

    def __call__(self, e_a: Tensor, e_m: Tensor, classes: np.ndarray) -> Tensor:
        if not (e_a.shape[0] == e_m.shape[0] == len(classes)):
            raise IntegrityError(f"fusion parts misaligned: {e_a.shape[0]}, {e_m.shape[0]}, {len(classes)}")
        if e_a.shape[0] == 0:
            return Tensor(np.zeros((0, self.dim)))
        return self.mlp(concat([e_a, e_m, Tensor(classes)], axis=-1))
