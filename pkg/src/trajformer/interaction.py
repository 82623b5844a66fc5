"""Global-local hypothesis interaction and the confidence / box-refinement heads."""
from __future__ import annotations

import math

import numpy as np

from .geometry import BoxState, from_local, to_local, wrap_angle
from .hypotheses import IntegrityError
from .numerics import AttentionBlock, Mlp, ParamStore, Tensor, getitem, reshape, sigmoid

MODES = ("none", "global", "global-local")


def check_grouping(groups: np.ndarray, m: int) -> None:
    flat = np.asarray(groups).ravel()
    if flat.size != m or not np.array_equal(np.sort(flat), np.arange(m)):
        raise IntegrityError(f"grouping does not partition 0..{m - 1}")


class Interaction:
    """``rounds`` x (global self-attention over all hypotheses, then per-track self-attention)."""

    def __init__(self, store: ParamStore, dim: int, heads: int, rounds: int = 3, prefix: str = "inter"):
        self.dim = dim
        self.rounds = rounds
        self.global_blocks = [AttentionBlock(store, f"{prefix}.global{i}", dim, heads) for i in range(rounds)]
        self.local_blocks = [AttentionBlock(store, f"{prefix}.local{i}", dim, heads) for i in range(rounds)]

    def global_round(self, x: Tensor, i: int = 0) -> Tensor:
        m = x.shape[0]
        if m == 0:
            return x
        return reshape(self.global_blocks[i](reshape(x, (1, m, self.dim))), (m, self.dim))

    def local_round(self, x: Tensor, groups: np.ndarray, i: int = 0) -> Tensor:
        m = x.shape[0]
        check_grouping(groups, m)
        if m == 0:
            return x
        n, g = groups.shape
        flat = groups.ravel()
        grouped = reshape(getitem(x, flat), (n, g, self.dim))
        out = reshape(self.local_blocks[i](grouped), (n * g, self.dim))
        return getitem(out, np.argsort(flat, kind="stable"))

    def __call__(self, x: Tensor, groups: np.ndarray, mode: str = "global-local", rounds: int | None = None) -> Tensor:
        if mode not in MODES:
            raise ValueError(f"interaction mode must be one of {MODES}")
        rounds = self.rounds if rounds is None else rounds
        if mode == "none":
            return x
        for i in range(rounds):
            x = self.global_round(x, i)
            if mode == "global-local":
                x = self.local_round(x, groups, i)
        return x


class ConfidenceHead:
    def __init__(self, store: ParamStore, dim: int, prefix: str = "head.conf"):
        self.mlp = Mlp(store, prefix, (dim, dim, 1))

    def logits(self, x: Tensor) -> Tensor:
        return reshape(self.mlp(x), (x.shape[0],))

    def __call__(self, x: Tensor) -> Tensor:
        return sigmoid(self.logits(x))


class RefineHead:
    """Seven residuals per hypothesis; see :func:`encode_residual` for the parameterization."""

    def __init__(self, store: ParamStore, dim: int, prefix: str = "head.reg"):
        self.mlp = Mlp(store, prefix, (dim, dim, 7))

    def __call__(self, x: Tensor) -> Tensor:
        return self.mlp(x)


def encode_residual(target: BoxState, cand: BoxState) -> np.ndarray:
    """Residual from ``cand`` to ``target`` in the candidate frame.

    (dx, dy) / BEV diagonal, dz / height, log size ratios, wrapped heading delta.
    """
    diag = math.hypot(cand.l, cand.w)
    dxy = to_local(np.array([target.x, target.y]), cand) / diag
    return np.array(
        [
            dxy[0],
            dxy[1],
            (target.z - cand.z) / cand.h,
            math.log(target.l / cand.l),
            math.log(target.w / cand.w),
            math.log(target.h / cand.h),
            wrap_angle(target.heading - cand.heading),
        ]
    )


def decode_residual(res: np.ndarray, cand: BoxState) -> BoxState:
    if cand.is_sentinel:
        return cand
    res = np.asarray(res, dtype=np.float64)
    diag = math.hypot(cand.l, cand.w)
    xy = from_local(res[:2] * diag, cand)
    return BoxState(
        float(xy[0]),
        float(xy[1]),
        cand.z + res[2] * cand.h,
        cand.l * math.exp(res[3]),
        cand.w * math.exp(res[4]),
        cand.h * math.exp(res[5]),
        cand.heading + res[6],
        t=cand.t,
        score=cand.score,
    )
