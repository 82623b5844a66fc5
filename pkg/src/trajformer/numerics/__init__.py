"""Minimal autodiff tensor core plus MLP and attention blocks."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, relative_error
from .nn import AttentionBlock, ConfigError, Mlp, MlpSpec, ParamStore, init_mlp, mlp_forward, multi_head_attention
from .optim import Adam, AdamState, adam_step
from .tensor import (
    DimensionError,
    Tensor,
    as_tensor,
    bce_with_logits,
    broadcast_to,
    concat,
    exp,
    getitem,
    layer_norm,
    linear,
    log,
    masked_max,
    max_pool_rows,
    mul,
    no_grad,
    relu,
    reshape,
    scaled_dot_attention,
    sigmoid,
    smooth_l1,
    softmax_rows,
    tabs,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
