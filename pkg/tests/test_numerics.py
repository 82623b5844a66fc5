import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajformer.numerics import (
    Adam,
    AdamState,
    AttentionBlock,
    DimensionError,
    Mlp,
    MlpSpec,
    ConfigError,
    ParamStore,
    Tensor,
    adam_step,
    grad_check,
    load_checkpoint,
    masked_max,
    max_pool_rows,
    mlp_forward,
    mul,
    multi_head_attention,
    save_checkpoint,
    softmax_rows,
)
from trajformer.numerics.tensor import layer_norm, linear


def test_identity_mlp():
    spec = MlpSpec((2, 2))
    params = [(Tensor(np.eye(2), requires_grad=True), Tensor(np.zeros(2), requires_grad=True))]
    out = mlp_forward(Tensor([1.0, 2.0]), spec, params)
    assert out.data.tolist() == [1.0, 2.0]


def test_zero_weight_relu_layer_gives_zeros():
    spec = MlpSpec((3, 4, 2))
    params = [
        (Tensor(np.zeros((3, 4))), Tensor(np.zeros(4))),
        (Tensor(np.ones((4, 2))), Tensor(np.zeros(2))),
    ]
    out = mlp_forward(Tensor([5.0, -2.0, 1.0]), spec, params)
    assert np.all(out.data == 0.0)


def test_mlp_rejects_bad_specs():
    with pytest.raises(ConfigError):
        MlpSpec((3,))
    with pytest.raises(ConfigError):
        MlpSpec((3, 0, 2))
    mlp = Mlp(ParamStore(0), "m", (3, 2))
    with pytest.raises(DimensionError):
        mlp(Tensor(np.zeros((2, 4))))


def test_mlp_gradcheck():
    store = ParamStore(3)
    mlp = Mlp(store, "m", (4, 6, 3))
    x = Tensor(np.random.default_rng(0).normal(size=(5, 4)), requires_grad=True)
    params = {**dict(store.items()), "x": x}
    assert grad_check(lambda: mlp(x).sum(), params) < 1e-4


def test_max_pool_example():
    assert max_pool_rows(Tensor([[1.0, 5.0], [3.0, 2.0]])).data.tolist() == [3.0, 5.0]


def test_max_pool_tie_routes_gradient_to_first_row():
    x = Tensor(np.tile([1.5, -2.0, 0.25], (4, 1)), requires_grad=True)
    out = max_pool_rows(x)
    assert out.data.tolist() == [1.5, -2.0, 0.25]
    out.sum().backward()
    assert np.all(x.grad[0] == 1.0)
    assert np.all(x.grad[1:] == 0.0)


def test_max_pool_gradcheck():
    x = Tensor(np.random.default_rng(1).normal(size=(8, 16)), requires_grad=True)
    proj = np.random.default_rng(2).normal(size=16)
    assert grad_check(lambda: mul(max_pool_rows(x), proj).sum(), {"x": x}) < 1e-4


def test_masked_max_ignores_masked_rows():
    x = Tensor([[[9.0], [1.0], [2.0]]])
    out = masked_max(x, np.array([[False, True, True]]), axis=-2)
    assert out.data.tolist() == [[2.0]]
    with pytest.raises(ValueError):
        masked_max(x, np.zeros((1, 3), dtype=bool), axis=-2)


@given(st.permutations(range(6)))
def test_max_pool_permutation_invariant(perm):
    x = np.random.default_rng(5).normal(size=(6, 4))
    a = max_pool_rows(Tensor(x)).data
    b = max_pool_rows(Tensor(x[list(perm)])).data
    assert np.array_equal(a, b)


def test_softmax_examples():
    out = softmax_rows(Tensor([0.0, 0.0, 0.0])).data
    assert np.allclose(out, 1 / 3, atol=0, rtol=1e-15)
    big = softmax_rows(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big))
    assert big[0] == 1.0 and big[1] < 1e-300


def test_softmax_rows_sum_to_one():
    out = softmax_rows(Tensor(np.random.default_rng(3).normal(size=(4, 7)))).data
    assert np.all(np.abs(out.sum(axis=-1) - 1.0) < 1e-12)


def test_single_key_attention_matches_hand_expansion():
    store = ParamStore(4)
    block = AttentionBlock(store, "a", 8, 2)
    rng = np.random.default_rng(0)
    q = rng.normal(size=(3, 8))
    kv = rng.normal(size=(1, 8))
    out = multi_head_attention(Tensor(q), Tensor(kv), block).data
    # one key: every attention weight is 1, so each head returns V(kv) unchanged
    v = kv @ block.wv.data + block.bv.data
    attended = v @ block.wo.data + block.bo.data
    h = layer_norm(Tensor(q + attended), block.ln1_g, block.ln1_b).data
    ffn = block.ffn(Tensor(h)).data
    expect = layer_norm(Tensor(h + ffn), block.ln2_g, block.ln2_b).data
    assert np.allclose(out, expect, atol=1e-12)


@settings(max_examples=25)
@given(st.permutations(range(5)))
def test_self_attention_is_permutation_equivariant(perm):
    block = AttentionBlock(ParamStore(6), "a", 8, 2)
    x = np.random.default_rng(7).normal(size=(1, 5, 8))
    perm = list(perm)
    a = block(Tensor(x)).data[0]
    b = block(Tensor(x[:, perm])).data[0]
    assert np.array_equal(a[perm], b)


def test_attention_gradcheck():
    store = ParamStore(8)
    block = AttentionBlock(store, "a", 8, 2)
    x = Tensor(np.random.default_rng(9).normal(size=(1, 3, 8)), requires_grad=True)
    proj = np.random.default_rng(10).normal(size=(1, 3, 8))
    params = {**dict(store.items()), "x": x}
    assert grad_check(lambda: mul(block(x), proj).sum(), params) < 1e-4


def test_attention_shape_errors():
    block = AttentionBlock(ParamStore(0), "a", 8, 2)
    with pytest.raises(DimensionError):
        block(Tensor(np.zeros((1, 3, 6))))
    with pytest.raises(ConfigError):
        AttentionBlock(ParamStore(0), "b", 6, 4)


def test_adam_zero_gradient_leaves_params():
    p = {"w": Tensor([1.0, -2.0], requires_grad=True)}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    assert p["w"].data.tolist() == [1.0, -2.0]


def test_adam_single_step_by_hand():
    p = {"w": Tensor([0.0], requires_grad=True)}
    eps = 1e-8
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=0.001, eps=eps)
    # bias-corrected m = 1, v = 1
    assert p["w"].data[0] == pytest.approx(-0.001 / (1.0 + eps), rel=1e-12)


def test_adam_minimizes_square():
    w = Tensor([1.0], requires_grad=True)
    opt = Adam({"w": w}, lr=0.01)
    for _ in range(100):
        opt.zero_grad()
        mul(w, w).sum().backward()
        opt.step()
    assert abs(w.data[0]) < 0.5


def test_gradcheck_square():
    w = Tensor([3.0], requires_grad=True)
    assert grad_check(lambda: mul(w, w).sum(), {"w": w}) < 1e-9


def test_gradcheck_negative_control():
    w = Tensor([3.0], requires_grad=True)
    err = grad_check(lambda: mul(w, w).sum(), {"w": w}, analytic={"w": np.array([12.0])})
    assert err == pytest.approx(0.5, abs=1e-6)
    assert err > 1e-4


def test_grads_accumulate_across_backward_calls():
    w = Tensor([2.0], requires_grad=True)
    mul(w, 3.0).sum().backward()
    mul(w, 3.0).sum().backward()
    assert w.grad.tolist() == [6.0]


def test_backward_needs_scalar():
    with pytest.raises(DimensionError):
        (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()


def test_shared_subexpression_gradient():
    x = Tensor([1.5], requires_grad=True)
    y = mul(x, x)
    (y + y).sum().backward()
    assert x.grad.tolist() == [6.0]


def test_linear_shape_error():
    with pytest.raises(DimensionError):
        linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_param_store_is_order_independent():
    a, b = ParamStore(11), ParamStore(11)
    a.uniform("x", (3,), 3)
    a.uniform("y", (2,), 2)
    b.uniform("y", (2,), 2)
    b.uniform("x", (3,), 3)
    assert np.array_equal(a["x"].data, b["x"].data)
    with pytest.raises(KeyError):
        a.zeros("x", (1,))


def test_param_store_freeze():
    s = ParamStore(0)
    s.zeros("motion.a", (1,))
    s.zeros("enc.b", (1,))
    s.freeze("motion.")
    assert list(s.trainable()) == ["enc.b"]


@pytest.mark.parametrize("suffix", [".npz", ".json"])
def test_checkpoint_roundtrip(tmp_path, suffix):
    params = {"a": np.arange(6.0).reshape(2, 3) / 7.0, "b": np.array([math.pi])}
    path = save_checkpoint(tmp_path / f"ck{suffix}", params, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    for k in params:
        assert np.array_equal(loaded[k], params[k])


def test_npz_checkpoint_bytes_are_stable(tmp_path):
    params = {"a": np.random.default_rng(0).normal(size=(4, 4))}
    p1 = save_checkpoint(tmp_path / "a.npz", params)
    p2 = save_checkpoint(tmp_path / "b.npz", params)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.npz")
    store = ParamStore(0)
    store.zeros("a", (2,))
    with pytest.raises(DimensionError):
        store.load({"a": np.zeros(3)})
    with pytest.raises(KeyError):
        store.load({"b": np.zeros(2)})
