"""Parameter registry and the learned blocks: MLP and multi-head attention."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    add,
    layer_norm,
    linear,
    relu,
    reshape,
    scaled_dot_attention,
    transpose,
)


class ConfigError(ValueError):
    pass


class ParamStore:
    """Named parameter tensors with a seeded initializer.

    Each parameter draws from its own generator keyed by (seed, name), so the
    values do not depend on creation order.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()

    def _rng(self, name: str) -> np.random.Generator:
        key = [ord(c) for c in name]
        return np.random.default_rng(np.random.SeedSequence([self.seed, *key]))

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, self._rng(name).uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if not any(k.startswith(f) for f in self.frozen)}

    def freeze(self, prefix: str) -> None:
        self.frozen.add(prefix)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, arr in values.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unknown parameter {name!r}")
                continue
            cur = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != cur.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model shape {cur.shape}")
            cur.data = arr.copy()
        if strict:
            missing = set(self._params) - set(values)
            if missing:
                raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``[d_in, h1, ..., d_out]``; ReLU between layers, identity on output."""

    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("MlpSpec needs at least one layer (two widths)")
        if any(w <= 0 for w in self.widths):
            raise ConfigError(f"MlpSpec widths must be positive: {self.widths}")


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec) -> list[tuple[Tensor, Tensor]]:
    layers = []
    for i, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        w = store.uniform(f"{prefix}.{i}.w", (a, b), a)
        bias = store.uniform(f"{prefix}.{i}.b", (b,), a)
        layers.append((w, bias))
    return layers


def mlp_forward(x: Tensor, spec: MlpSpec, params: list[tuple[Tensor, Tensor]]) -> Tensor:
    if x.shape[-1] != spec.widths[0]:
        raise DimensionError(f"mlp input x: trailing dim {x.shape[-1]} != {spec.widths[0]}")
    h = x
    for i, (w, b) in enumerate(params):
        h = linear(h, w, b)
        if i < len(params) - 1:
            h = relu(h)
    return h


class Mlp:
    def __init__(self, store: ParamStore, prefix: str, widths):
        self.spec = MlpSpec(tuple(widths))
        self.params = init_mlp(store, prefix, self.spec)

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(x, self.spec, self.params)


class AttentionBlock:
    """Post-norm transformer block: LN(q + MHA(q, kv)) followed by LN(h + FFN(h)).

    Inputs are batched as ``[B, n, D]``; self-attention passes the same tensor twice.
    """

    def __init__(self, store: ParamStore, prefix: str, dim: int, heads: int, ffn_mult: int = 2):
        if dim % heads:
            raise ConfigError(f"model width {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        p = prefix
        self.wq = store.uniform(f"{p}.q.w", (dim, dim), dim)
        self.bq = store.zeros(f"{p}.q.b", (dim,))
        self.wk = store.uniform(f"{p}.k.w", (dim, dim), dim)
        self.bk = store.zeros(f"{p}.k.b", (dim,))
        self.wv = store.uniform(f"{p}.v.w", (dim, dim), dim)
        self.bv = store.zeros(f"{p}.v.b", (dim,))
        self.wo = store.uniform(f"{p}.o.w", (dim, dim), dim)
        self.bo = store.zeros(f"{p}.o.b", (dim,))
        self.ln1_g = store.ones(f"{p}.ln1.g", (dim,))
        self.ln1_b = store.zeros(f"{p}.ln1.b", (dim,))
        self.ffn = Mlp(store, f"{p}.ffn", (dim, ffn_mult * dim, dim))
        self.ln2_g = store.ones(f"{p}.ln2.g", (dim,))
        self.ln2_b = store.zeros(f"{p}.ln2.b", (dim,))

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return transpose(reshape(x, (b, n, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def attend(self, query_in: Tensor, kv_in: Tensor) -> Tensor:
        """Projected multi-head attention without the residual/norm/FFN wrapper."""
        b, nq, _ = query_in.shape
        q = self._split(linear(query_in, self.wq, self.bq))
        k = self._split(linear(kv_in, self.wk, self.bk))
        v = self._split(linear(kv_in, self.wv, self.bv))
        heads = scaled_dot_attention(q, k, v)
        merged = reshape(transpose(heads, (0, 2, 1, 3)), (b, nq, self.dim))
        return linear(merged, self.wo, self.bo)

    def __call__(self, query_in: Tensor, kv_in: Tensor | None = None) -> Tensor:
        kv_in = query_in if kv_in is None else kv_in
        if query_in.ndim != 3 or kv_in.ndim != 3:
            raise DimensionError(f"attention expects [B, n, D] inputs, got {query_in.shape}, {kv_in.shape}")
        if query_in.shape[-1] != self.dim or kv_in.shape[-1] != self.dim:
            raise DimensionError(f"attention width mismatch: {query_in.shape} / {kv_in.shape} vs D={self.dim}")
        if query_in.shape[0] != kv_in.shape[0]:
            raise DimensionError("attention: query and key/value batch sizes differ")
        h = layer_norm(add(query_in, self.attend(query_in, kv_in)), self.ln1_g, self.ln1_b)
        return layer_norm(add(h, self.ffn(h)), self.ln2_g, self.ln2_b)


def multi_head_attention(query_in: Tensor, kv_in: Tensor, block: AttentionBlock) -> Tensor:
    """Unbatched convenience wrapper: ``[n_q, D]`` x ``[n_kv, D]`` -> ``[n_q, D]``."""
    q = reshape(query_in, (1,) + query_in.shape)
    kv = reshape(kv_in, (1,) + kv_in.shape)
    out = block(q, kv)
    return reshape(out, query_in.shape)
