import numpy as np
import pytest

from trajformer.encoder import (
    BOX_FEATURES,
    POINT_FEATURES,
    AppearanceEncoder,
    Fusion,
    MotionEmbedding,
    build_batch,
    normalize_box_sequence,
    point_features,
)
from trajformer.hypotheses import IntegrityError, Trajectory, build_hypotheses, grouping
from trajformer.numerics import ParamStore, Tensor, layer_norm, mul
from trajformer.sim import LabeledBox, one_hot

from conftest import car


def test_identical_frames_pool_to_single_frame():
    emb = MotionEmbedding(ParamStore(0), 8)
    row = np.random.default_rng(0).normal(size=BOX_FEATURES)
    omega = np.tile(row, (1, 5, 1))
    out = emb(omega, np.ones((1, 5), dtype=bool)).data[0]
    assert np.array_equal(out, emb.mlp(Tensor(row[None])).data[0])


def test_motion_embedding_permutation_and_padding():
    emb = MotionEmbedding(ParamStore(1), 8)
    rng = np.random.default_rng(1)
    omega = rng.normal(size=(2, 6, BOX_FEATURES))
    mask = np.ones((2, 6), dtype=bool)
    mask[:, :2] = False
    base = emb(omega, mask).data
    perm = rng.permutation(6)
    assert np.array_equal(emb(omega[:, perm], mask[:, perm]).data, base)
    padded = np.concatenate([np.zeros((2, 3, BOX_FEATURES)), omega], axis=1)
    pmask = np.concatenate([np.zeros((2, 3), dtype=bool), mask], axis=1)
    assert np.array_equal(emb(padded, pmask).data, base)


def test_appearance_single_token_hand_expansion():
    store = ParamStore(2)
    enc = AppearanceEncoder(store, 8, 2, blocks=1)
    pts = np.random.default_rng(2).normal(size=(3, 1, POINT_FEATURES))
    out = enc(pts).data
    tok = enc.self_blocks[0](enc.tokens(pts))
    query = Tensor(np.broadcast_to(enc.query.data, (3, 1, 8)))
    # one key: the cross-attention weight is exactly 1, so the query sees V(token) only
    blk = enc.cross_blocks[0]
    v = mul(tok, 1.0).data @ blk.wv.data + blk.bv.data
    att = v @ blk.wo.data + blk.bo.data
    h = layer_norm(Tensor(query.data + att), blk.ln1_g, blk.ln1_b).data
    expect = layer_norm(Tensor(h + blk.ffn(Tensor(h)).data), blk.ln2_g, blk.ln2_b).data[:, 0]
    assert np.allclose(out, expect, atol=1e-12)


def test_appearance_point_permutation_invariant():
    enc = AppearanceEncoder(ParamStore(3), 8, 2, blocks=2)
    pts = np.random.default_rng(3).normal(size=(2, 10, POINT_FEATURES))
    perm = np.random.default_rng(4).permutation(10)
    assert np.array_equal(enc(pts).data, enc(pts[:, perm]).data)


def test_appearance_shape():
    enc = AppearanceEncoder(ParamStore(4), 64, 4, blocks=3)
    assert enc(np.zeros((18, 128, POINT_FEATURES))).shape == (18, 64)


def test_fusion_class_path_and_alignment():
    store = ParamStore(5)
    fuse = Fusion(store, 4)
    assert one_hot("vehicle").tolist() == [1.0, 0.0, 0.0]
    for _, b in fuse.mlp.params:
        b.data[...] = 0.0
    zeros = Tensor(np.zeros((3, 4)))
    cls = np.eye(3)
    out = fuse(zeros, zeros, cls).data
    w0, w1 = fuse.mlp.params[0][0].data, fuse.mlp.params[1][0].data
    expect = np.maximum(cls @ w0[8:], 0.0) @ w1
    assert np.allclose(out, expect, atol=1e-15)
    with pytest.raises(IntegrityError):
        fuse(zeros, Tensor(np.zeros((2, 4))), cls)


def test_fusion_gradient_reaches_both_embeddings():
    store = ParamStore(6)
    emb = MotionEmbedding(store, 4)
    app = AppearanceEncoder(store, 4, 2, blocks=1)
    fuse = Fusion(store, 4)
    rng = np.random.default_rng(6)
    out = fuse(app(rng.normal(size=(2, 3, POINT_FEATURES))), emb(rng.normal(size=(2, 3, 8)), np.ones((2, 3), bool)), np.eye(3)[:2])
    mul(out, rng.normal(size=(2, 4))).sum().backward()
    assert np.abs(store["enc.motion.0.w"].grad).sum() > 0
    assert np.abs(store["enc.app.in.0.w"].grad).sum() > 0


def test_normalized_sequence_puts_candidate_at_origin():
    hist = [car(0.5 * k, 0.25 * k, 0.3, t=k) for k in range(4)]
    tr = Trajectory(0, "vehicle", hist, birth=0)
    cand = car(2.0, 1.0, 0.3, t=4)
    h = build_hypotheses([tr], [LabeledBox(0, "vehicle", cand)], 4, t_f=0, w=1, t_h=4)[0]
    norm = normalize_box_sequence(h.omega, h.omega_mask, h.candidate, h.history_ref)
    assert np.allclose(norm[-1, [0, 1, 2, 6]], 0.0)
    assert norm[-1, 3:6].tolist() == [4.5, 1.9, 1.6]


def test_empty_crop_sets_flag():
    f = point_features(np.zeros((0, 4)), car(), 4, np.random.default_rng(0))
    assert f.shape == (4, POINT_FEATURES)
    assert np.all(f[:, -1] == 1.0)


def _batch(offset):
    hist = [car(0.5 * k + offset, 0.25 * k - offset, 0.375, t=k) for k in range(5)]
    tr = Trajectory(0, "vehicle", hist, birth=0)
    dets = [LabeledBox(0, "vehicle", car(2.5 + offset, 1.25 - offset, 0.375, t=5))]
    hyps = build_hypotheses([tr], dets, 5, t_f=0, w=2, t_h=4)
    rng = np.random.default_rng(0)
    cloud = np.column_stack([rng.integers(-64, 64, size=(300, 2)) / 32.0 + [2.5, 1.25], rng.integers(0, 64, 300) / 32.0, np.zeros(300)])
    cloud[:, 0] += offset
    cloud[:, 1] -= offset
    return build_batch(hyps, cloud, grouping(hyps)[1], 16, 4)


def test_embeddings_translation_invariant_exactly():
    # dyadic coordinates keep every subtraction exact
    a, b = _batch(0.0), _batch(64.0)
    assert np.array_equal(a.omega, b.omega)
    assert np.array_equal(a.points, b.points)
    store = ParamStore(7)
    emb, app = MotionEmbedding(store, 8), AppearanceEncoder(store, 8, 2, blocks=1)
    assert np.array_equal(emb(a.omega, a.omega_mask).data, emb(b.omega, b.omega_mask).data)
    assert np.array_equal(app(a.points).data, app(b.points).data)
