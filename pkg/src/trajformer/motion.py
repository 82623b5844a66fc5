"""History encoding and future-state prediction for trajectories.

A history window is ``T_h`` rows of (x, y, z, l, w, h, heading, time) expressed
in the frame of the last valid box.  The predictor emits ``T_f`` rows of
(dx, dy, dheading) in that same frame.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import BoxState, from_local, to_local, wrap_angle
from .numerics import Mlp, ParamStore, Tensor, masked_max, mul, no_grad, tabs

STATE_DIM = 8


class EmptyMaskWarning(UserWarning):
    pass


@dataclass
class HistoryWindow:
    rows: np.ndarray  # [T_h, 8], local frame, front-padded with zeros
    mask: np.ndarray  # [T_h] bool
    ref: BoxState  # last valid box


def history_window(boxes: list[BoxState], t_h: int) -> HistoryWindow:
    """Window of the last ``t_h`` boxes, normalized to the frame of the newest one."""
    if not boxes:
        raise ValueError("history window needs at least one valid frame")
    recent = boxes[-t_h:]
    ref = recent[-1]
    n = len(recent)
    rows = np.zeros((t_h, STATE_DIM))
    mask = np.zeros(t_h, dtype=bool)
    geom = np.array([b.geometry() for b in recent])
    local = to_local(geom[:, :2], ref)
    rows[t_h - n :, 0:2] = local
    rows[t_h - n :, 2] = geom[:, 2] - ref.z
    rows[t_h - n :, 3:6] = geom[:, 3:6]
    rows[t_h - n :, 6] = wrap_angle(geom[:, 6] - ref.heading)
    rows[t_h - n :, 7] = np.arange(t_h - n, t_h) - (t_h - 1)
    mask[t_h - n :] = True
    return HistoryWindow(rows, mask, ref)


@dataclass
class FuturePrediction:
    deltas: np.ndarray  # [T_f, 3]: dx, dy, dheading in the reference frame
    boxes: list[BoxState]


def decode_future(deltas: np.ndarray, ref: BoxState) -> list[BoxState]:
    """Absolute future boxes; size and z copied from ``ref``."""
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 3)
    xy = from_local(deltas[:, :2], ref)
    return [
        BoxState(xy[j, 0], xy[j, 1], ref.z, ref.l, ref.w, ref.h, ref.heading + deltas[j, 2], t=ref.t + j + 1)
        for j in range(len(deltas))
    ]


def future_targets(ref: BoxState, future: list[BoxState | None], t_f: int) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth deltas in the reference frame and their validity mask."""
    target = np.zeros((t_f, 3))
    mask = np.zeros(t_f, dtype=bool)
    for j, b in enumerate(future[:t_f]):
        if b is None:
            continue
        target[j, :2] = to_local(np.array([b.x, b.y]), ref)
        target[j, 2] = wrap_angle(b.heading - ref.heading)
        mask[j] = True
    return target, mask


class MotionPredictor:
    """PointNet-style history encoder followed by an MLP head over ``T_f`` future steps."""

    def __init__(self, store: ParamStore, t_h: int = 10, t_f: int = 5, dim: int = 64, prefix: str = "motion"):
        self.t_h, self.t_f, self.dim = t_h, t_f, dim
        self.prefix = prefix
        self.encoder = Mlp(store, f"{prefix}.enc", (STATE_DIM, dim, dim))
        self.head = Mlp(store, f"{prefix}.head", (dim, dim, 3 * t_f))

    def encode_history(self, rows: np.ndarray | Tensor, mask: np.ndarray) -> Tensor:
        """``[B, T_h, 8]`` -> ``[B, D]``; padded rows never win the max-pool."""
        mask = np.asarray(mask, dtype=bool)
        if not np.all(mask.any(axis=-1)):
            raise ValueError("history window with zero valid frames")
        x = rows if isinstance(rows, Tensor) else Tensor(rows)
        return masked_max(self.encoder(x), mask, axis=-2)

    def predict_deltas(self, h_g: Tensor) -> Tensor:
        out = self.head(h_g)
        return out.reshape(h_g.shape[0], self.t_f, 3)

    def __call__(self, rows, mask) -> Tensor:
        return self.predict_deltas(self.encode_history(rows, mask))

    def predict(self, histories: list[list[BoxState]]) -> list[FuturePrediction]:
        """Run the predictor on raw box histories and decode absolute boxes."""
        if not histories:
            return []
        windows = [history_window(h, self.t_h) for h in histories]
        rows = np.stack([w.rows for w in windows])
        mask = np.stack([w.mask for w in windows])
        with no_grad():
            deltas = self(rows, mask).data
        return [FuturePrediction(d, decode_future(d, w.ref)) for d, w in zip(deltas, windows)]


class ConstantVelocityPredictor:
    """Analytic baseline with the ``predict`` interface: extrapolates the last displacement."""

    def __init__(self, t_f: int = 5, t_h: int = 10):
        self.t_f, self.t_h = t_f, t_h

    def predict(self, histories: list[list[BoxState]]) -> list[FuturePrediction]:
        out = []
        for h in histories:
            ref = h[-1]
            if len(h) >= 2:
                prev = h[-2]
                step = to_local(np.array([ref.x, ref.y]), prev)
                dh = wrap_angle(ref.heading - prev.heading)
            else:
                step, dh = np.zeros(2), 0.0
            deltas = np.zeros((self.t_f, 3))
            # constant speed and turn rate, integrated in the reference frame
            heading, pos = 0.0, np.zeros(2)
            for j in range(self.t_f):
                c, s = math.cos(heading), math.sin(heading)
                pos = pos + np.array([c * step[0] - s * step[1], s * step[0] + c * step[1]])
                heading += dh
                deltas[j] = (pos[0], pos[1], heading)
            out.append(FuturePrediction(deltas, decode_future(deltas, ref)))
        return out


def motion_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean absolute error over masked (x, y, heading) entries; heading error wrapped."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum()) * 3
    if n == 0:
        warnings.warn("motion_loss: every future step is masked out", EmptyMaskWarning, stacklevel=2)
        return mul(pred, 0.0).sum()
    diff = pred - Tensor(target)
    # shift heading errors by whole turns; the shift is constant so gradients pass through
    shift = np.zeros_like(target)
    raw = diff.data[..., 2]
    shift[..., 2] = raw - wrap_angle(raw)
    diff = diff - Tensor(shift)
    weights = np.broadcast_to(mask[..., None], target.shape).astype(np.float64)
    return mul(tabs(diff), weights).sum() / n
