import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DAY, T0, addr, tx
from oracles import dense_attention
from txscam import nn
from txscam.encoder import FeatureConfig, subgraph_features
from txscam.nn import ParamSet
from txscam.seqmodel import (ConflictingFlags, Example, Mask, Model, SeqModelConfig, SingleClassDataset,
                             apply_mask, attention, classify, collate, feed_forward, init_seq_params,
                             label_from_scores, loss, predict, seq_forward, train, transpose_embed,
                             weight_penalty)
from txscam.strwalk import Subgraph, make_rng

FEAT = FeatureConfig()


def seq_params(cfg=SeqModelConfig(), channels=16, seed=0):
    return init_seq_params(cfg, channels, make_rng(seed, "seq"))


def example(rng, n_intervals, label, scale=1):
    ivs = []
    for t in range(n_intervals):
        n = int(rng.integers(0, 4)) * scale
        if n == 0:
            ivs.append(None)
            continue
        edges = [tx(100 * t + i, 0 if i % 2 else int(rng.integers(1, 5)), int(rng.integers(1, 5)) if i % 2 else 0,
                    T0 + t * 7 * DAY + i) for i in range(n)]
        sub = Subgraph(addr(0), {a for e in edges for a in (e.sender, e.receiver)}, edges)
        ivs.append(subgraph_features(sub, T0, 7))
    return Example(addr(label * 1000 + n_intervals), ivs, label)


def test_config_validation():
    with pytest.raises(ValueError):
        SeqModelConfig(hidden=15, heads=2)
    with pytest.raises(ValueError):
        SeqModelConfig(max_len=0)
    with pytest.raises(ConflictingFlags):
        SeqModelConfig.from_flags(disable_graph_encoder=True, disable_transposed=True)
    assert SeqModelConfig.from_flags(disable_transposed=True).ablate == "transpose"


def test_transpose_embed():
    phi = np.arange(6.0).reshape(3, 2)
    x, valid = transpose_embed(phi, 5)
    assert x.shape == (2, 5) and valid.tolist() == [True, True, True, False, False]
    np.testing.assert_array_equal(x[:, :3].T, phi)
    x, valid = transpose_embed(np.arange(10.0).reshape(5, 2), 3)
    np.testing.assert_array_equal(x.T, np.arange(4.0, 10.0).reshape(3, 2))


def test_apply_mask_cases():
    s = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal(apply_mask(s, None), s)
    one = nn.softmax(apply_mask(s, np.array([False, True, False]))).data
    np.testing.assert_allclose(one[:, 1], 1.0)
    causal = nn.softmax(apply_mask(s, None, causal=True)).data
    assert causal[0, 0] == 1.0 and np.all(np.triu(causal, 1) == 0)


def test_attention_single_position_and_uniform():
    p = seq_params()
    x = np.random.default_rng(1).normal(size=(1, 1, 16))
    h = attention(x, p, None, heads=2).data
    np.testing.assert_allclose(h, x @ p["v_w"].data, atol=1e-12)
    p["q_w"].data[:] = 0
    p["k_w"].data[:] = 0
    x = np.random.default_rng(2).normal(size=(1, 4, 16))
    valid = np.array([[True, True, True, False]])
    h = attention(x, p, Mask(valid).scores_mask(), heads=2).data
    v = x[0] @ p["v_w"].data
    np.testing.assert_allclose(h[0], np.tile(v[:3].mean(0), (4, 1)), atol=1e-12)


@given(st.integers(1, 6), st.integers(0, 2**31), st.booleans())
def test_attention_matches_dense_oracle(L, seed, causal):
    rng = np.random.default_rng(seed)
    p = seq_params(seed=seed % 7)
    x = rng.normal(size=(1, L, 16))
    valid = np.ones((1, L), bool)
    valid[0, rng.integers(0, L):] = rng.random() < 0.5
    valid[0, 0] = True
    h, w = attention(x, p, Mask(valid, causal).scores_mask(), heads=2, return_weights=True)
    ref, ref_w = dense_attention(x[0], p["q_w"].data, p["k_w"].data, p["v_w"].data, 2, valid[0], causal)
    np.testing.assert_allclose(h.data[0], ref, atol=1e-12)
    np.testing.assert_allclose(w.data[0], ref_w, atol=1e-12)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)


def test_attention_shape_mismatch():
    with pytest.raises(nn.ShapeMismatch):
        attention(np.zeros((1, 3, 8)), seq_params(), None, heads=2)


def test_feed_forward_cases():
    ps = ParamSet()
    for n in ("ff_w1", "ff_w2"):
        ps.add(n, np.zeros((4, 4)))
    ps.add("ff_b1", np.zeros(4))
    ps.add("ff_b2", np.full(4, 3.0))
    np.testing.assert_array_equal(feed_forward(np.ones((2, 4)), ps).data, 3.0)
    w2 = np.random.default_rng(3).normal(size=(4, 4))
    ps["ff_w2"].data[:] = w2
    ps["ff_b2"].data[:] = 0
    np.testing.assert_allclose(feed_forward(np.zeros((1, 4)), ps).data[0], 0.5 * w2.sum(0), atol=1e-12)
    with pytest.raises(nn.ShapeMismatch):
        feed_forward(np.zeros((1, 5)), ps)


def test_classify_bias_only():
    p = seq_params(SeqModelConfig(ablate="transpose"))
    for n in ("conv_w", "conv_b", "proj_w"):
        p[n].data[:] = 0
    p["proj_b"].data[:] = [0.3, -0.2]
    logits = classify(np.zeros((2, 4, 16)), np.ones((2, 4), bool), p).data
    np.testing.assert_allclose(logits, [[0.3, -0.2]] * 2)


def test_classify_ignores_padding_content():
    p = seq_params(SeqModelConfig(ablate="transpose"))
    rng = np.random.default_rng(4)
    h = rng.normal(size=(1, 3, 16))
    valid = np.ones((1, 3), bool)
    padded = np.concatenate([h, rng.normal(size=(1, 2, 16))], 1)
    vpad = np.array([[True, True, True, False, False]])
    np.testing.assert_allclose(classify(h, valid, p).data, classify(padded, vpad, p).data, atol=1e-12)


@pytest.mark.parametrize("ablate", [None, "transpose"])
def test_padding_extension_invariance(ablate):
    cfg = SeqModelConfig(ablate=ablate, max_len=12)
    p = seq_params(cfg)
    rng = np.random.default_rng(5)
    phi = rng.normal(size=(1, 4, 16))
    valid = np.ones((1, 4), bool)
    base = seq_forward(phi, valid, p, cfg).data
    for extra in (1, 5, 8):
        ext = np.concatenate([phi, rng.normal(size=(1, extra, 16))], 1)
        v = np.concatenate([valid, np.zeros((1, extra), bool)], 1)
        assert np.max(np.abs(seq_forward(ext * v[..., None], v, p, cfg).data - base)) < 1e-12


def test_transposed_rejects_overlong():
    cfg = SeqModelConfig(max_len=3)
    with pytest.raises(nn.ShapeMismatch):
        seq_forward(np.zeros((1, 4, 16)), np.ones((1, 4), bool), seq_params(cfg), cfg)


def test_loss_cases():
    assert float(loss(np.zeros((2, 2)), [0, 1], [], 0).data) == pytest.approx(math.log(2), abs=1e-15)
    assert float(loss(np.array([[50.0, -50.0]]), [0], [], 0).data) < 1e-30
    ps = ParamSet()
    ps.add("w", np.array([[1.0, 2.0]]))
    ps.add("b", np.array([10.0]), weight=False)
    logits = np.random.default_rng(6).normal(size=(3, 2))
    d = float(loss(logits, [0, 1, 1], [ps], 0.1).data) - float(loss(logits, [0, 1, 1], [ps], 0).data)
    assert d == pytest.approx(0.5, abs=1e-14)
    assert float(weight_penalty([ps]).data) == 5.0


def test_full_model_gradients():
    rng = np.random.default_rng(7)
    exs = [example(rng, 3, 1), example(rng, 2, 0)]
    cfg = SeqModelConfig(max_len=4, conv_channels=2)
    model = Model(FeatureConfig(hidden=4), SeqModelConfig(hidden=4, max_len=4, conv_channels=2))
    batch = collate(exs, cfg.max_len, model.feat_cfg)
    params = [p for g in model.groups for p in g]
    assert nn.grad_check(lambda: model.loss(batch), params) < 1e-6


def test_predict_tie_goes_to_normal():
    assert label_from_scores(np.array([0.5, 0.5000001]))[0] == 0
    model = Model(FEAT, SeqModelConfig())
    for n in ("proj_w", "proj_b"):
        model.seq_params[n].data[:] = 0
    label, score = predict(model, example(np.random.default_rng(8), 3, 1))
    assert (label, score) == (0, 0.5)


def test_single_class_rejected():
    rng = np.random.default_rng(9)
    with pytest.raises(SingleClassDataset):
        train([example(rng, 3, 1), example(rng, 4, 1)], SeqModelConfig(epochs=1))
    with pytest.raises(SingleClassDataset):
        train([], SeqModelConfig(epochs=1))


def _toy_set(n=10):
    rng = np.random.default_rng(10)
    return [example(rng, 4, 1, scale=3) if i % 2 else example(rng, 4, 0, scale=1) for i in range(n)]


def test_training_loss_decreases_and_is_deterministic():
    data = _toy_set()
    cfg = SeqModelConfig(epochs=5, batch_size=10, learning_rate=1e-2, max_len=8)
    a = train(data, cfg, FEAT)
    b = train(data, cfg, FEAT)
    losses = [h.train_loss for h in a.history]
    assert all(x > y for x, y in zip(losses, losses[1:]))
    assert losses == [h.train_loss for h in b.history]


def test_huge_decay_shrinks_weights():
    data = _toy_set()
    cfg = SeqModelConfig(epochs=3, batch_size=10, weight_decay=1e3, learning_rate=1e-3, max_len=8)
    model = Model(FEAT, cfg)
    before = float(weight_penalty(model.groups).data)
    after = float(weight_penalty(train(data, cfg, FEAT).model.groups).data)
    assert after < before


def test_checkpoint_roundtrip_and_mismatch(tmp_path):
    data = _toy_set(4)
    res = train(data, SeqModelConfig(epochs=1, max_len=8), FEAT)
    res.model.save(tmp_path / "m.json")
    back = Model.load(tmp_path / "m.json")
    ex = data[0]
    assert predict(back, ex) == predict(res.model, ex)
    other = Model(FEAT, SeqModelConfig(max_len=9))
    groups, _ = nn.load_checkpoint(tmp_path / "m.json")
    with pytest.raises(nn.ShapeMismatch):
        other.load_state(groups)


@pytest.mark.parametrize("ablate", ["graph", "transpose"])
def test_ablations_run(ablate):
    data = _toy_set(6)
    res = train(data, SeqModelConfig(epochs=2, ablate=ablate, max_len=8), FEAT)
    assert len(res.history) == 2 and np.isfinite(res.history[-1].train_loss)
    if ablate == "graph":
        assert res.model.groups == [res.model.seq_params]
