"""The full hypothesis scoring network: encoders, interaction and heads under one parameter store."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .encoder import AppearanceEncoder, Fusion, HypothesisBatch, MotionEmbedding
from .interaction import MODES, ConfidenceHead, Interaction, RefineHead, decode_residual
from .motion import MotionPredictor
from .numerics import ParamStore, Tensor, no_grad
from .numerics.tensor import _stable_sigmoid
from .sim import CLASSES

EMBEDDINGS = ("traj", "point", "both")


@dataclass
class NetworkConfig:
    dim: int = 64
    heads: int = 4
    y_count: int = 32
    t_h: int = 10
    t_f: int = 5  # predicted hypotheses per track during training
    horizon: int = 10  # motion predictor output steps; covers every --pred-boxes arm up to 10
    point_blocks: int = 3
    rounds: int = 3
    interaction: str = "global-local"
    embedding: str = "both"
    motion_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.interaction not in MODES:
            raise ValueError(f"interaction must be one of {MODES}")
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"embedding must be one of {EMBEDDINGS}")
        if self.horizon < self.t_f:
            raise ValueError("predictor horizon must cover t_f")

    def to_dict(self) -> dict:
        return asdict(self)


class ScoringNetwork:
    def __init__(self, config: NetworkConfig, store: ParamStore | None = None):
        self.config = c = config
        self.store = store if store is not None else ParamStore(c.seed)
        s = self.store
        self.motion = MotionEmbedding(s, c.dim)
        self.appearance = AppearanceEncoder(s, c.dim, c.heads, c.point_blocks)
        self.fusion = Fusion(s, c.dim, len(CLASSES))
        self.interaction = Interaction(s, c.dim, c.heads, c.rounds)
        self.conf_head = ConfidenceHead(s, c.dim)
        self.refine_head = RefineHead(s, c.dim)

    def embed(self, batch: HypothesisBatch) -> Tensor:
        c = self.config
        e_m = self.motion(batch.omega, batch.omega_mask)
        e_a = self.appearance(batch.points)
        if c.embedding == "traj":
            e_a = Tensor(np.zeros(e_a.shape))
        elif c.embedding == "point":
            e_m = Tensor(np.zeros(e_m.shape))
        return self.fusion(e_a, e_m, batch.classes)

    def features(self, batch: HypothesisBatch, interaction: str | None = None) -> Tensor:
        mode = interaction or self.config.interaction
        return self.interaction(self.embed(batch), batch.groups, mode)

    def __call__(self, batch: HypothesisBatch, interaction: str | None = None) -> tuple[Tensor, Tensor]:
        """Confidence logits ``[M]`` and box residuals ``[M, 7]``."""
        feats = self.features(batch, interaction)
        if feats.shape[0] == 0:
            return Tensor(np.zeros(0)), Tensor(np.zeros((0, 7)))
        return self.conf_head.logits(feats), self.refine_head(feats)

    def score(self, batch: HypothesisBatch, interaction: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Inference: confidences in (0, 1) and raw residuals."""
        with no_grad():
            logits, res = self(batch, interaction)
        return _stable_sigmoid(logits.data), res.data

    def refine(self, batch: HypothesisBatch, residuals: np.ndarray, index: int):
        return decode_residual(residuals[index], batch.candidates[index])


def build_models(config: NetworkConfig, seed: int | None = None) -> tuple[ParamStore, MotionPredictor, ScoringNetwork]:
    """One parameter store holding the motion predictor (``motion.*``) and the scorer."""
    store = ParamStore(config.seed if seed is None else seed)
    predictor = MotionPredictor(store, config.t_h, config.horizon, config.motion_dim)
    network = ScoringNetwork(config, store)
    return store, predictor, network

