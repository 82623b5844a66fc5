import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajformer.hypotheses import IntegrityError
from trajformer.interaction import ConfidenceHead, Interaction, RefineHead, decode_residual, encode_residual
from trajformer.numerics import ParamStore, Tensor, grad_check, layer_norm, mul

from conftest import car


def make(rounds=1, dim=8):
    return Interaction(ParamStore(0), dim, 2, rounds=rounds)


def test_single_token_global_round_is_residual_block():
    inter = make()
    x = np.random.default_rng(0).normal(size=(1, 8))
    blk = inter.global_blocks[0]
    out = inter.global_round(Tensor(x)).data
    att = (x @ blk.wv.data + blk.bv.data) @ blk.wo.data + blk.bo.data
    h = layer_norm(Tensor(x + att), blk.ln1_g, blk.ln1_b).data
    expect = layer_norm(Tensor(h + blk.ffn(Tensor(h)).data), blk.ln2_g, blk.ln2_b).data
    assert np.allclose(out, expect, atol=1e-12)


def test_empty_batch():
    inter = make()
    assert inter.global_round(Tensor(np.zeros((0, 8)))).shape == (0, 8)


@settings(max_examples=20)
@given(st.permutations(range(6)))
def test_global_round_equivariant(perm):
    inter = make()
    x = np.random.default_rng(1).normal(size=(6, 8))
    perm = list(perm)
    assert np.array_equal(inter.global_round(Tensor(x)).data[perm], inter.global_round(Tensor(x[perm])).data)


def test_global_round_gradcheck():
    store = ParamStore(1)
    inter = Interaction(store, 8, 2, rounds=1)
    x = Tensor(np.random.default_rng(2).normal(size=(6, 8)), requires_grad=True)
    proj = np.random.default_rng(3).normal(size=(6, 8))
    assert grad_check(lambda: mul(inter.global_round(x), proj).sum(), {**dict(store.items()), "x": x}, max_entries=8) < 1e-4


def test_local_round_shares_parameters_across_groups():
    inter = make()
    block = np.random.default_rng(4).normal(size=(3, 8))
    x = np.vstack([block, block])
    out = inter.local_round(Tensor(x), np.array([[0, 1, 2], [3, 4, 5]])).data
    assert np.array_equal(out[:3], out[3:])


def test_local_round_locality_and_isolation():
    inter = make()
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 8))
    groups = np.array([[0, 2, 4], [1, 3, 5]])
    base = inter.local_round(Tensor(x), groups).data
    # shuffle inside group 0 only
    y = x.copy()
    y[[0, 2, 4]] = x[[4, 0, 2]]
    out = inter.local_round(Tensor(y), groups).data
    assert np.array_equal(out[[0, 2, 4]], base[[4, 0, 2]])
    assert np.array_equal(out[[1, 3, 5]], base[[1, 3, 5]])
    # edit group 1; group 0 unchanged
    z = x.copy()
    z[[1, 3, 5]] += 1.0
    assert np.array_equal(inter.local_round(Tensor(z), groups).data[[0, 2, 4]], base[[0, 2, 4]])


def test_malformed_grouping_rejected():
    with pytest.raises(IntegrityError):
        make().local_round(Tensor(np.zeros((4, 8))), np.array([[0, 1], [1, 2]]))


def test_interaction_modes():
    inter = make(rounds=2)
    x = np.random.default_rng(6).normal(size=(4, 8))
    g = np.array([[0, 1], [2, 3]])
    assert np.array_equal(inter(Tensor(x), g, rounds=0).data, x)
    assert np.array_equal(inter(Tensor(x), g, "none").data, x)
    glob = inter(Tensor(x), g, "global").data
    manual = inter.global_round(inter.global_round(Tensor(x), 0), 1).data
    assert np.array_equal(glob, manual)
    assert not np.array_equal(inter(Tensor(x), g, "global-local").data, glob)
    with pytest.raises(ValueError):
        inter(Tensor(x), g, "sideways")


def test_default_round_count():
    from trajformer.network import NetworkConfig

    assert NetworkConfig().rounds == 3


def test_zero_head_scores_half():
    store = ParamStore(0)
    head = ConfidenceHead(store, 4)
    for w, b in head.mlp.params:
        w.data[...] = 0.0
        b.data[...] = 0.0
    assert np.all(head(Tensor(np.ones((3, 4)))).data == 0.5)


def test_scores_strictly_inside_unit_interval():
    head = ConfidenceHead(ParamStore(1), 4)
    s = head(Tensor(np.random.default_rng(0).normal(scale=3.0, size=(50, 4)))).data
    assert np.all((s > 0) & (s < 1))


def test_residual_decode_arithmetic():
    cand = car(1.0, 2.0, 0.5)
    assert decode_residual(np.zeros(7), cand) == cand
    doubled = decode_residual(np.array([0, 0, 0, math.log(2.0), 0, 0, 0]), cand)
    assert doubled.l == pytest.approx(2 * cand.l)
    sentinel = cand.sentinel(3)
    assert decode_residual(np.ones(7), sentinel) is sentinel


def test_residual_roundtrip(rng):
    for _ in range(20):
        cand = car(*rng.normal(size=2), heading=rng.uniform(-3, 3))
        tgt = car(*rng.normal(size=2), heading=rng.uniform(-3, 3), l=rng.uniform(3, 5))
        back = decode_residual(encode_residual(tgt, cand), cand)
        assert np.allclose(back.geometry(), tgt.geometry(), atol=1e-9)


def test_refine_head_shape():
    assert RefineHead(ParamStore(0), 4)(Tensor(np.zeros((5, 4)))).shape == (5, 7)
