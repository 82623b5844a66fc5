"""Finite-difference gradient checks for every learned block, on tiny float64 instances."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .encoder import BOX_FEATURES, POINT_FEATURES, AppearanceEncoder, Fusion, HypothesisBatch, MotionEmbedding
from .interaction import ConfidenceHead, Interaction, RefineHead
from .motion import MotionPredictor, motion_loss
from .network import NetworkConfig, ScoringNetwork
from .numerics import (
    AttentionBlock,
    Mlp,
    ParamStore,
    Tensor,
    bce_with_logits,
    grad_check,
    layer_norm,
    masked_max,
    mul,
    smooth_l1,
    softmax_rows,
)
from .sim import CLASSES

TOLERANCE = 1e-4
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _projection(shape, rng) -> np.ndarray:
    return rng.normal(size=shape)


def _scalar(out: Tensor, proj: np.ndarray) -> Tensor:
    return mul(out, proj).sum()


def _with_input(store: ParamStore, name: str, value: np.ndarray) -> dict[str, Tensor]:
    """Parameters plus the input itself, so input gradients are checked too."""
    params = dict(store.items())
    params[name] = Tensor(value, requires_grad=True, name=name)
    return params


def check_mlp(rng) -> float:
    store = ParamStore(1)
    mlp = Mlp(store, "mlp", (5, 7, 3))
    params = _with_input(store, "x", rng.normal(size=(4, 5)))
    proj = _projection((4, 3), rng)
    return grad_check(lambda: _scalar(mlp(params["x"]), proj), params, EPS)


def check_max_pool(rng) -> float:
    x = Tensor(rng.normal(size=(3, 6, 4)), requires_grad=True)
    mask = np.ones((3, 6), dtype=bool)
    mask[0, :2] = False
    proj = _projection((3, 4), rng)
    return grad_check(lambda: _scalar(masked_max(x, mask, axis=-2), proj), {"x": x}, EPS)


def check_layer_norm(rng) -> float:
    x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    g = Tensor(rng.uniform(0.5, 1.5, size=6), requires_grad=True)
    b = Tensor(rng.normal(size=6), requires_grad=True)
    proj = _projection((3, 6), rng)
    return grad_check(lambda: _scalar(layer_norm(x, g, b), proj), {"x": x, "gamma": g, "beta": b}, EPS)


def check_softmax(rng) -> float:
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    proj = _projection((3, 5), rng)
    return grad_check(lambda: _scalar(softmax_rows(x), proj), {"x": x}, EPS)


def check_attention(rng) -> float:
    store = ParamStore(2)
    block = AttentionBlock(store, "att", 8, 2)
    params = _with_input(store, "q", rng.normal(size=(2, 3, 8)))
    params["kv"] = Tensor(rng.normal(size=(2, 5, 8)), requires_grad=True)
    proj = _projection((2, 3, 8), rng)
    return grad_check(lambda: _scalar(block(params["q"], params["kv"]), proj), params, EPS)


def check_motion_predictor(rng) -> float:
    store = ParamStore(3)
    mp = MotionPredictor(store, t_h=4, t_f=3, dim=6)
    rows = rng.normal(size=(3, 4, 8))
    mask = np.ones((3, 4), dtype=bool)
    mask[1, 0] = False
    target = rng.normal(size=(3, 3, 3))
    tmask = np.ones((3, 3), dtype=bool)
    tmask[2, 2] = False
    return grad_check(lambda: motion_loss(mp(rows, mask), target, tmask), dict(store.items()), EPS)


def check_motion_embedding(rng) -> float:
    store = ParamStore(4)
    emb = MotionEmbedding(store, 6)
    omega = rng.normal(size=(3, 5, BOX_FEATURES))
    mask = np.ones((3, 5), dtype=bool)
    mask[0, :3] = False
    proj = _projection((3, 6), rng)
    return grad_check(lambda: _scalar(emb(omega, mask), proj), dict(store.items()), EPS)


def check_appearance(rng) -> float:
    store = ParamStore(5)
    enc = AppearanceEncoder(store, 8, 2, blocks=2)
    pts = rng.normal(size=(2, 4, POINT_FEATURES))
    proj = _projection((2, 8), rng)
    return grad_check(lambda: _scalar(enc(pts), proj), dict(store.items()), EPS, max_entries=6)


def check_fusion(rng) -> float:
    store = ParamStore(6)
    fuse = Fusion(store, 4)
    params = _with_input(store, "e_a", rng.normal(size=(3, 4)))
    params["e_m"] = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    cls = np.eye(len(CLASSES))[[0, 1, 2]]
    proj = _projection((3, 4), rng)
    return grad_check(lambda: _scalar(fuse(params["e_a"], params["e_m"], cls), proj), params, EPS)


def check_interaction(rng) -> float:
    store = ParamStore(7)
    inter = Interaction(store, 8, 2, rounds=2)
    params = _with_input(store, "x", rng.normal(size=(6, 8)))
    groups = np.array([[0, 2, 4], [1, 3, 5]])
    proj = _projection((6, 8), rng)
    return grad_check(lambda: _scalar(inter(params["x"], groups, "global-local"), proj), params, EPS, max_entries=6)


def check_heads(rng) -> float:
    store = ParamStore(8)
    conf = ConfidenceHead(store, 6)
    reg = RefineHead(store, 6)
    params = _with_input(store, "x", rng.normal(size=(5, 6)))
    labels = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    target = rng.normal(scale=0.3, size=(5, 7))
    w = np.repeat(labels[:, None], 7, axis=1) / labels.sum()

    def loss():
        x = params["x"]
        return bce_with_logits(conf.logits(x), labels) + mul(smooth_l1(reg(x) - Tensor(target)), w).sum()

    return grad_check(loss, params, EPS)


def check_network(rng) -> float:
    cfg = NetworkConfig(dim=8, heads=2, y_count=4, t_h=3, t_f=2, point_blocks=1, rounds=1, motion_dim=4)
    net = ScoringNetwork(cfg)
    n, g = 2, 3
    m = n * g
    batch = HypothesisBatch(
        omega=rng.normal(size=(m, cfg.t_h + 1, BOX_FEATURES)),
        omega_mask=np.ones((m, cfg.t_h + 1), dtype=bool),
        points=rng.normal(size=(m, cfg.y_count, POINT_FEATURES)),
        classes=np.eye(len(CLASSES))[[0] * g + [1] * g],
        groups=np.arange(m).reshape(n, g),
        candidates=[],
    )
    labels = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 1.0])
    target = rng.normal(scale=0.3, size=(m, 7))
    w = np.repeat(labels[:, None], 7, axis=1) / labels.sum()

    def loss():
        logits, res = net(batch)
        return bce_with_logits(logits, labels) + mul(smooth_l1(res - Tensor(target)), w).sum()

    return grad_check(loss, dict(net.store.items()), EPS, max_entries=3)


REGISTRY: dict[str, Callable[[np.random.Generator], float]] = {
    "mlp": check_mlp,
    "max_pool": check_max_pool,
    "layer_norm": check_layer_norm,
    "softmax": check_softmax,
    "attention": check_attention,
    "motion_predictor": check_motion_predictor,
    "motion_embedding": check_motion_embedding,
    "appearance_encoder": check_appearance,
    "fusion": check_fusion,
    "interaction": check_interaction,
    "heads": check_heads,
    "scoring_network": check_network,
}


def run_gradchecks(names: list[str] | None = None, seed: int = 0) -> list[CheckResult]:
    out = []
    for name in names or list(REGISTRY):
        rng = np.random.default_rng(np.random.SeedSequence([seed, *map(ord, name)]))
        t0 = time.perf_counter()
        err = REGISTRY[name](rng)
        out.append(CheckResult(name, err, time.perf_counter() - t0))
    return out
