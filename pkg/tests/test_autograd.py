import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mohe import autograd as ag
from mohe.gradcheck import check_function, op_checks
from mohe.optim import AdamState, adam_step

from oracles import conv_loop, layer_norm_formula


def T(x, grad=False):
    return ag.Tensor(np.asarray(x, dtype=float), requires_grad=grad)


# ---- conv1d_same ---------------------------------------------------------

def test_conv_identity_kernel():
    out = ag.conv1d_same(T([[1], [2], [3]]), T([[[1]]]), T([0]))
    np.testing.assert_array_equal(out.data, [[1], [2], [3]])


def test_conv_zero_kernel_gives_bias():
    x = np.random.default_rng(0).normal(size=(6, 2))
    out = ag.conv1d_same(T(x), T(np.zeros((4, 2, 3))), T([0.5, -1, 2]))
    np.testing.assert_array_equal(out.data, np.tile([0.5, -1, 2], (6, 1)))


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(7)
    x, w, b = rng.normal(size=(7, 3)), rng.normal(size=(5, 3, 4)), rng.normal(size=4)
    out = ag.conv1d_same(T(x), T(w), T(b))
    assert out.shape == (7, 4)
    np.testing.assert_allclose(out.data, conv_loop(x, w, b), rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(length=st.integers(1, 9), depth=st.integers(1, 4), k=st.integers(1, 8), p=st.integers(1, 3),
       seed=st.integers(0, 2**31))
def test_conv_oracle_property(length, depth, k, p, seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(length, depth)), rng.normal(size=(k, depth, p)), rng.normal(size=p)
    np.testing.assert_allclose(ag.conv1d_same(T(x), T(w), T(b)).data, conv_loop(x, w, b), atol=1e-12)


def test_conv_batched_equals_unbatched():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(3, 6, 2)), rng.normal(size=(4, 2, 5)), rng.normal(size=5)
    batched = ag.conv1d_same(T(x), T(w), T(b)).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], ag.conv1d_same(T(x[i]), T(w), T(b)).data, atol=1e-13)


def test_conv_rejects_depth_mismatch():
    with pytest.raises(ag.ConfigurationError):
        ag.conv1d_same(T(np.zeros((4, 2))), T(np.zeros((3, 3, 1))), T([0]))


# ---- pooling, norm, dense ------------------------------------------------

def test_global_max_pool_examples():
    np.testing.assert_array_equal(ag.global_max_pool(T([[1, 5], [3, 2]])).data, [3, 5])
    np.testing.assert_array_equal(ag.global_max_pool(T(np.full((4, 3), 2.5))).data, [2.5] * 3)


def test_global_max_pool_tie_gradient_goes_to_first():
    x = T([[1.0], [1.0], [0.0]], grad=True)
    with ag.Tape() as tape:
        loss = ag.total(ag.global_max_pool(x))
    ag.backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [[1], [0], [0]])


def test_layer_norm_examples():
    out = ag.layer_norm(T(np.full(5, 3.0)), T(np.ones(5)), T(np.zeros(5)))
    assert np.all(np.abs(out.data) <= 1e-12)
    np.testing.assert_array_equal(ag.layer_norm(T([1, -1]), T([1, 1]), T([0, 0]), eps=0.0).data, [1, -1])


def test_layer_norm_matches_formula():
    rng = np.random.default_rng(3)
    v, g, o = rng.normal(size=9), rng.normal(size=9), rng.normal(size=9)
    np.testing.assert_allclose(ag.layer_norm(T(v), T(g), T(o)).data, layer_norm_formula(v, g, o, 1e-5), atol=1e-12)


def test_dense_examples():
    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(ag.dense(T(v), T(np.eye(3)), T(np.zeros(3))).data, v)
    np.testing.assert_array_equal(ag.dense(T(v), T(np.zeros((2, 3))), T([4, 5])).data, [4, 5])


# ---- losses --------------------------------------------------------------

def test_softmax_cross_entropy_examples():
    for target in range(3):
        loss, p = ag.softmax_cross_entropy(T([0, 0, 0]), target)
        assert loss.data == pytest.approx(math.log(3), abs=1e-15)
        np.testing.assert_allclose(p, [1 / 3] * 3)
    loss, _ = ag.softmax_cross_entropy(T([100, 0, 0]), 0)
    assert loss.data < 1e-9


def test_softmax_cross_entropy_gradient_is_p_minus_y():
    rng = np.random.default_rng(11)
    for _ in range(50):
        c = int(rng.integers(2, 8))
        z = T(rng.normal(scale=3, size=c), grad=True)
        y = int(rng.integers(c))
        with ag.Tape() as tape:
            loss, p = ag.softmax_cross_entropy(z, y)
        ag.backward(loss, tape)
        np.testing.assert_allclose(z.grad, p - np.eye(c)[y], rtol=0, atol=1e-10)


def test_targets_out_of_range():
    with pytest.raises(ValueError):
        ag.softmax_cross_entropy(T([0, 0]), 2)


# ---- dropout -------------------------------------------------------------

def test_dropout_identity_cases():
    x = T([1.0, 2.0, 3.0])
    assert ag.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert ag.dropout(x, 0.5, False) is x


def test_dropout_expectation():
    v = np.array([1.0, -2.0, 0.5])
    rng = np.random.default_rng(5)
    out = ag.dropout(T(np.tile(v, (100_000, 1))), 0.1, True, rng).data
    np.testing.assert_allclose(out.mean(axis=0), v, rtol=0.01)


def test_dropout_rate_bounds():
    with pytest.raises(ag.ConfigurationError):
        ag.dropout(T([1.0]), 1.0, True, np.random.default_rng(0))


# ---- Adam ----------------------------------------------------------------

def test_adam_zero_grad_no_change():
    w = {"w": np.array([1.0, -2.0])}
    adam_step(w, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(w["w"], [1.0, -2.0])


def test_adam_first_step_size():
    for g in (0.3, -7.0, 1e-3):
        w = {"w": np.array(0.0)}
        st_ = AdamState()
        adam_step(w, {"w": np.array(g)}, st_)
        expected = st_.lr * abs(g) / (abs(g) + st_.eps)
        assert abs(w["w"]) == pytest.approx(expected, rel=1e-12)
        assert abs(w["w"]) == pytest.approx(st_.lr, rel=1e-4)


def test_adam_converges_on_quadratic():
    w = {"w": np.array(0.0)}
    state = AdamState(lr=1e-2)
    for _ in range(5000):
        adam_step(w, {"w": 2 * (w["w"] - 3.0)}, state)
    assert abs(w["w"] - 3.0) < 1e-3


def test_adam_nan_gradient_leaves_params_untouched():
    w = {"a": np.array([1.0]), "b": np.array([2.0])}
    state = AdamState()
    with pytest.raises(FloatingPointError):
        adam_step(w, {"a": np.array([0.5]), "b": np.array([np.nan])}, state)
    assert w["a"][0] == 1.0 and w["b"][0] == 2.0 and state.t == 0


# ---- tape / backward -----------------------------------------------------

def test_constant_loss_zero_gradients():
    p = T([1.0, 2.0], grad=True)
    with ag.Tape() as tape:
        loss = T(5.0)
    ag.backward(loss, tape)
    np.testing.assert_array_equal(p.grad, [0, 0])


def test_sum_loss_gradient_ones():
    p = T(np.arange(6.0).reshape(2, 3), grad=True)
    with ag.Tape() as tape:
        loss = ag.total(p)
    ag.backward(loss, tape)
    np.testing.assert_array_equal(p.grad, np.ones((2, 3)))


def test_gradients_accumulate_across_backward_calls():
    p = T([1.0, 2.0], grad=True)
    for _ in range(2):
        with ag.Tape() as tape:
            loss = ag.total(ag.scale(p, 3.0))
        ag.backward(loss, tape)
    np.testing.assert_array_equal(p.grad, [6.0, 6.0])


def test_shared_subexpression_gradient():
    p = T([0.3, -0.2], grad=True)
    with ag.Tape() as tape:
        h = ag.tanh(p)
        loss = ag.total(ag.add(h, h))
    ag.backward(loss, tape)
    np.testing.assert_allclose(p.grad, 2 * (1 - np.tanh(p.data) ** 2))


def test_backward_rejects_non_scalar_and_foreign_loss():
    p = T([1.0, 2.0], grad=True)
    with ag.Tape() as tape:
        out = ag.tanh(p)
    with pytest.raises(ValueError):
        ag.backward(out, tape)
    with ag.Tape():
        foreign = ag.total(p)
    with pytest.raises(ValueError):
        ag.backward(foreign, ag.Tape())


def test_non_finite_forward_raises():
    with pytest.raises(FloatingPointError):
        ag.nll(T([0.0, 1.0]), 0)


def test_thread_composite_finite_differences():
    rng = np.random.default_rng(2)
    emb, kern = T(rng.uniform(-.5, .5, (9, 4)), True), T(rng.normal(size=(3, 4, 5)), True)
    bias, gain, off = T(rng.normal(size=5), True), T(rng.uniform(.5, 1.5, 5), True), T(rng.normal(size=5), True)
    w, b = T(rng.normal(size=(3, 5)), True), T(rng.normal(size=3), True)
    idx = rng.integers(0, 9, size=(2, 6))
    y = np.array([0, 2])

    def fn():
        v = ag.dropout(ag.embedding(emb, idx), 0.2, True, np.random.default_rng(9))
        u = ag.layer_norm(ag.global_max_pool(ag.conv1d_same(v, kern, bias)), gain, off)
        return ag.mean(ag.softmax_cross_entropy(ag.dense(u, w, b), y)[0])

    leaves = dict(emb=emb, kern=kern, bias=bias, gain=gain, off=off, w=w, b=b)
    res = check_function("thread", fn, leaves, 6, rng)
    assert res.max_rel_error < 1e-4


def test_every_op_passes_gradcheck():
    suite = op_checks(seed=4)
    names = {c.name for c in suite.checks}
    assert {"conv1d_same[K=4]", "global_max_pool", "layer_norm", "dense", "mixture", "nll"} <= names
    assert suite.passed(), [(c.name, c.max_rel_error) for c in suite.checks]
