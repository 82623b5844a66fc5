"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    analytic: dict[str, np.ndarray] | None = None,
    elementwise: bool = False,
) -> float:
    """Relative error between analytic and central-difference gradients.

    By default this is ``|a - n| / max(|a|, |n|)`` over the vector of every
    probed coordinate, which stays meaningful when some entries are exactly
    zero (e.g. key biases under softmax).  ``elementwise=True`` returns the
    worst per-coordinate relative error instead.

    ``f`` rebuilds the scalar loss from the current parameter values.  With
    ``max_entries`` set, each parameter tensor is probed at that many seeded
    random coordinates instead of exhaustively.  ``analytic`` overrides the
    backprop gradients (used for negative controls).
    """
    for t in params.values():
        t.grad = None
    loss = f()
    loss.backward()
    if analytic is None:
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    a_all, n_all = [], []
    for name in sorted(params):
        t = params[name]
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        g = np.asarray(analytic[name]).reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            worst = max(worst, float(relative_error(g[i], num)))
            a_all.append(g[i])
            n_all.append(num)
    if elementwise:
        return worst
    a, n = np.array(a_all), np.array(n_all)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)
