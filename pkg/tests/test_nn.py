import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from txscam import nn
from txscam.nn import Adam, ParamSet, Param, ShapeMismatch, Tape, Tensor, grad_check

RNG = np.random.default_rng(0)


def rand(*shape):
    return RNG.normal(size=shape)


def check(f, *params, tol=1e-6):
    assert grad_check(f, list(params)) < tol


def test_add_mul_broadcast_grads():
    a, b = Param(rand(3, 4), "a"), Param(rand(4), "b")
    check(lambda: nn.square_sum(nn.mul(a + b, a)), a, b)


def test_matmul_batched_grads():
    a, b = Param(rand(2, 3, 4), "a"), Param(rand(4, 5), "b")
    check(lambda: nn.square_sum(a @ b), a, b)
    with pytest.raises(ShapeMismatch):
        nn.matmul(rand(2, 3), rand(4, 5))
    v = Param(rand(4), "v")
    check(lambda: nn.square_sum(v @ b), v, b)


def test_reshape_swap_concat_grads():
    a, b = Param(rand(2, 3, 4), "a"), Param(rand(2, 3, 2), "b")
    f = lambda: nn.square_sum(nn.reshape(nn.swapaxes(nn.concat([a, b], -1), 1, 2), (2, 18)) @ np.ones((18, 1)))  # noqa: E731
    check(f, a, b)


def test_activation_grads():
    x = Param(rand(5, 3), "x")
    for act in (lambda t: nn.leaky_relu(t, 0.1), nn.elu, nn.sigmoid):
        check(lambda: nn.square_sum(act(x)), x)


def test_softmax_masked_grads_and_rows():
    x = Param(rand(4, 6), "x")
    mask = RNG.random((4, 6)) > 0.4
    mask[:, 0] = True
    w = nn.softmax(x, mask=mask)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)
    assert np.all(w.data[~mask] == 0)
    t = rand(4, 6)
    check(lambda: nn.sum(nn.mul(nn.softmax(x, mask=mask), t)), x)


def test_masked_max_mean_grads():
    x = Param(rand(3, 5, 2), "x")
    mask = np.ones((3, 5, 1), dtype=bool)
    mask[0, 3:] = False
    check(lambda: nn.square_sum(nn.masked_max(x, mask, 1)) + nn.square_sum(nn.masked_mean(x, mask, 1)), x)
    m = nn.masked_mean(x, mask, 1).data
    np.testing.assert_allclose(m[0], x.data[0, :3].mean(0))


def test_conv1d_against_loops_and_grads():
    x, w, b = Param(rand(2, 6, 3), "x"), Param(rand(3, 3, 4), "w"), Param(rand(4), "b")
    y = nn.conv1d(x, w, b).data
    ref = np.zeros((2, 6, 4))
    for bi in range(2):
        for t in range(6):
            for k in range(3):
                s = t + k - 1
                if 0 <= s < 6:
                    ref[bi, t] += x.data[bi, s] @ w.data[k]
            ref[bi, t] += b.data
    np.testing.assert_allclose(y, ref, atol=1e-12)
    check(lambda: nn.square_sum(nn.conv1d(x, w, b)), x, w, b)


def test_take_and_scatter_rows():
    a = Param(rand(3, 2), "a")
    check(lambda: nn.square_sum(nn.scatter_rows(a, [0, 2, 4], 5)) + nn.square_sum(nn.take_rows(a, [1, 1])), a)
    out = nn.scatter_rows(a, [0, 2, 4], 5).data
    assert np.all(out[[1, 3]] == 0)


def test_cross_entropy_uniform_is_ln2():
    ce = nn.cross_entropy(np.zeros((3, 2)), [0, 1, 1])
    assert abs(float(ce.data) - math.log(2)) < 1e-15
    logits = Param(rand(5, 2), "l")
    check(lambda: nn.cross_entropy(logits, [0, 1, 0, 1, 1]), logits)


def test_backward_needs_scalar():
    x = Param(rand(2), "x")
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeMismatch):
        tape.backward(y)


def test_backward_resets_grads_between_runs():
    x = Param(np.array([1.0, 2.0]), "x")
    for _ in range(2):
        with Tape() as tape:
            y = nn.square_sum(x)
        tape.backward(y)
        np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_no_tape_records_nothing():
    x = Param(rand(2), "x")
    y = x * 3.0
    assert not y.requires_grad


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_matmul_grad_shapes(n, k, m):
    a, b = Param(np.ones((n, k)), "a"), Param(np.ones((k, m)), "b")
    with Tape() as tape:
        y = nn.sum(a @ b)
    tape.backward(y)
    np.testing.assert_allclose(a.grad, np.full((n, k), m))
    np.testing.assert_allclose(b.grad, np.full((k, m), n))


def test_adam_matches_reference_update():
    p = Param(np.array([1.0, -2.0]), "w")
    opt = Adam([p], lr=0.1, weight_decay=0.01)
    g = np.array([0.5, -1.0])
    p.grad = g.copy()
    opt.step()
    # first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g)
    expect = np.array([1.0, -2.0]) * (1 - 0.1 * 0.01) - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expect, atol=1e-12)


def test_adam_decay_only_named():
    w, b = Param(np.ones(2), "w"), Param(np.ones(2), "b")
    opt = Adam([w, b], lr=0.1, weight_decay=0.5, decay_names={"w"})
    opt.step()
    np.testing.assert_allclose(w.data, 0.95)
    np.testing.assert_allclose(b.data, 1.0)


def test_paramset_state_and_mismatch():
    ps = ParamSet()
    ps.add("w", np.ones((2, 2)))
    ps.add("b", np.zeros(2), weight=False)
    assert [p.name for p in ps.weights()] == ["w"]
    with pytest.raises(KeyError):
        ps.add("w", np.ones(1))
    with pytest.raises(ShapeMismatch):
        ps.load_state({"w": np.ones((3, 2)), "b": np.zeros(2)})
    with pytest.raises(ShapeMismatch):
        ps.load_state({"w": np.ones((2, 2))})


def test_checkpoint_roundtrip(tmp_path):
    ps = ParamSet()
    ps.add("w", rand(3, 2))
    nn.save_checkpoint(tmp_path / "c.json", {"g": ps}, {"note": 1})
    groups, meta = nn.load_checkpoint(tmp_path / "c.json")
    assert meta == {"note": 1}
    np.testing.assert_array_equal(groups["g"]["w"], ps["w"].data)


def test_grad_check_detects_wrong_gradient():
    x = Param(rand(3), "x")

    def bad():
        out = Tensor(np.sum(x.data ** 2))
        return nn._record(out, (x,), lambda g: x._acc(g * x.data))  # half the true gradient
    assert grad_check(bad, [x]) > 1e-2
