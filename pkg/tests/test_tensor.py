"""Autodiff core: every op finite-difference checked, plus numeric anchors."""
import math

import numpy as np
import pytest

from desklm import tensor as T
from desklm.errors import ShapeError
from oracles import (cross_entropy_mpmath, finite_diff_grad, rel_error,
                     truncated_normal_sd)

TOL = 1e-5
H = 1e-5


def _rand(rng, *shape, scale=1.0):
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def check_grads(build, *tensors, tol=TOL):
    """build() -> scalar Tensor. Verifies backward against central FD."""
    loss = build()
    loss.backward()
    for t in tensors:
        assert t.grad is not None, "no gradient reached a leaf"
        num = finite_diff_grad(lambda: build().item(), t, h=H)
        err = rel_error(t.grad, num)
        assert err < tol, f"gradient mismatch: rel err {err:.3e}"


def weighted(out, rng):
    """Reduce via a fixed random projection so axis mix-ups can't cancel."""
    w = rng.standard_normal(out.shape)
    return T.sum_all(T.mul(out, T.Tensor(w)))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- elementwise and structural ops -----------------------------------------

def test_add_grad(rng):
    a, b = _rand(rng, 4, 5), _rand(rng, 4, 5)
    check_grads(lambda: weighted(T.add(a, b), np.random.default_rng(1)), a, b)


def test_add_broadcast_grad(rng):
    a, b = _rand(rng, 4, 5), _rand(rng, 5)
    check_grads(lambda: weighted(T.add(a, b), np.random.default_rng(1)), a, b)


def test_mul_grad(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    check_grads(lambda: weighted(T.mul(a, b), np.random.default_rng(1)), a, b)


def test_mul_broadcast_grad(rng):
    a, b = _rand(rng, 3, 1), _rand(rng, 1, 4)
    check_grads(lambda: weighted(T.mul(a, b), np.random.default_rng(1)), a, b)


def test_scale_grad(rng):
    a = _rand(rng, 6)
    check_grads(lambda: weighted(T.scale(a, -2.5), np.random.default_rng(1)), a)


def test_add_const_grad(rng):
    a = _rand(rng, 3, 3)
    c = rng.standard_normal((3, 3))
    check_grads(lambda: weighted(T.add_const(a, c), np.random.default_rng(1)), a)


def test_matmul_grad(rng):
    a, b = _rand(rng, 4, 6), _rand(rng, 6, 3)
    check_grads(lambda: weighted(T.matmul(a, b), np.random.default_rng(1)), a, b)


def test_bmm_grad(rng):
    a, b = _rand(rng, 2, 3, 4, 5), _rand(rng, 2, 3, 5, 2)
    check_grads(lambda: weighted(T.bmm(a, b), np.random.default_rng(1)), a, b)


def test_reshape_grad(rng):
    a = _rand(rng, 4, 6)
    check_grads(lambda: weighted(T.reshape(a, (2, 3, 4)), np.random.default_rng(1)), a)


def test_transpose_grad(rng):
    a = _rand(rng, 2, 3, 4)
    check_grads(lambda: weighted(T.transpose(a, (2, 0, 1)), np.random.default_rng(1)), a)


def test_embedding_grad(rng):
    w = _rand(rng, 7, 4)
    # repeated ids exercise scatter-add accumulation
    ids = np.array([[0, 3, 3], [6, 0, 1]])
    check_grads(lambda: weighted(T.embedding(w, ids), np.random.default_rng(1)), w)


def test_sum_all_grad(rng):
    a = _rand(rng, 3, 5)
    check_grads(lambda: T.sum_all(a), a)


def test_mean_all_grad(rng):
    a = _rand(rng, 3, 5)
    check_grads(lambda: T.mean_all(a), a)


# -- nonlinearities and norms ------------------------------------------------

def test_swish_grad(rng):
    a = _rand(rng, 4, 4, scale=2.0)
    check_grads(lambda: weighted(T.swish(a), np.random.default_rng(1)), a)


def test_swish_anchor():
    out = T.swish(T.Tensor(np.array([1.0])))
    assert out.data[0] == pytest.approx(0.7310585786300049, abs=1e-15)


def test_rms_norm_grad(rng):
    x, g = _rand(rng, 3, 8), _rand(rng, 8)
    check_grads(lambda: weighted(T.rms_norm(x, g), np.random.default_rng(1)), x, g)


def test_rms_norm_anchor():
    # rms([3,4]) = sqrt(12.5); eps=0 is allowed and keeps the anchor exact
    x = T.Tensor(np.array([[3.0, 4.0]]))
    g = T.Tensor(np.ones(2))
    out = T.rms_norm(x, g, eps=0.0)
    np.testing.assert_allclose(out.data, [[3 / math.sqrt(12.5), 4 / math.sqrt(12.5)]],
                               rtol=1e-15)


def test_layer_norm_grad(rng):
    x, g, b = _rand(rng, 4, 6), _rand(rng, 6), _rand(rng, 6)
    check_grads(lambda: weighted(T.layer_norm(x, g, b), np.random.default_rng(1)),
                x, g, b)


def test_layer_norm_zero_mean_unit_var():
    rng = np.random.default_rng(3)
    x = T.Tensor(rng.standard_normal((5, 16)) * 3 + 1)
    out = T.layer_norm(x, T.Tensor(np.ones(16)), T.Tensor(np.zeros(16)), eps=0.0)
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.std(axis=-1), 1.0, rtol=1e-12)


# -- attention pieces --------------------------------------------------------

def test_rope_grad(rng):
    x = _rand(rng, 2, 2, 5, 8)          # (B, heads, T, head_dim)
    pos = np.arange(5)
    check_grads(lambda: weighted(T.rope_rotate(x, pos), np.random.default_rng(1)), x)


def test_rope_anchor_single_pair():
    # head_dim 2, frequency theta^0 = 1: position m rotates by angle m
    x = T.Tensor(np.array([[[[1.0, 0.0]]]]))
    out = T.rope_rotate(x, np.array([1]), theta=10000.0)
    np.testing.assert_allclose(out.data.ravel(), [math.cos(1.0), math.sin(1.0)],
                               rtol=1e-15)


def test_rope_position_zero_is_identity(rng):
    x = _rand(rng, 1, 2, 1, 8)
    out = T.rope_rotate(x, np.array([0]))
    np.testing.assert_array_equal(out.data, x.data)


def test_rope_preserves_norm(rng):
    x = _rand(rng, 2, 3, 7, 16)
    out = T.rope_rotate(x, np.arange(7))
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1),
                               np.linalg.norm(x.data, axis=-1), rtol=1e-12)


def test_softmax_last_grad(rng):
    a = _rand(rng, 3, 6, scale=2.0)
    check_grads(lambda: weighted(T.softmax_last(a), np.random.default_rng(1)), a)


def test_softmax_rows_sum_to_one(rng):
    a = _rand(rng, 4, 9, scale=30.0)    # large logits: max-subtraction matters
    out = T.softmax_last(a)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, rtol=1e-12)


def test_cross_entropy_grad(rng):
    logits = _rand(rng, 5, 7, scale=2.0)
    targets = np.array([0, 3, 6, 1, 1])
    check_grads(lambda: T.softmax_cross_entropy(logits, targets), logits)


def test_cross_entropy_masked_grad(rng):
    logits = _rand(rng, 5, 7, scale=2.0)
    targets = np.array([0, 3, 6, 1, 1])
    mask = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    check_grads(lambda: T.softmax_cross_entropy(logits, targets, mask), logits)


def test_cross_entropy_uniform_logits_is_log_vocab():
    logits = T.Tensor(np.zeros((3, 11)))
    loss = T.softmax_cross_entropy(logits, np.array([0, 5, 10]))
    assert loss.item() == pytest.approx(math.log(11), rel=1e-15)


def test_cross_entropy_against_mpmath(rng):
    logits = rng.standard_normal((1, 13)) * 5
    want = cross_entropy_mpmath(logits[0], target=4)
    got = T.softmax_cross_entropy(T.Tensor(logits), np.array([4])).item()
    assert got == pytest.approx(want, abs=1e-12)


def test_swiglu_grad(rng):
    x = _rand(rng, 3, 6)
    wg, wu, wd = _rand(rng, 6, 10), _rand(rng, 6, 10), _rand(rng, 10, 6)
    check_grads(lambda: weighted(T.swiglu_ffn(x, wg, wu, wd),
                                 np.random.default_rng(1)), x, wg, wu, wd)


# -- engine behavior ---------------------------------------------------------

def test_backward_requires_scalar(rng):
    a = _rand(rng, 2, 2)
    with pytest.raises(ShapeError):
        T.add(a, a).backward()


def test_no_grad_leaves_untouched(rng):
    a = _rand(rng, 3)
    b = T.Tensor(np.ones(3))            # requires_grad=False
    T.sum_all(T.mul(a, b)).backward()
    assert a.grad is not None
    assert b.grad is None


def test_shared_leaf_accumulates(rng):
    a = _rand(rng, 4)
    loss = T.sum_all(T.add(T.mul(a, a), a))    # d/da (a^2 + a) = 2a + 1
    loss.backward()
    np.testing.assert_allclose(a.grad, 2 * a.data + 1, rtol=1e-12)


def test_deep_graph_no_recursion_limit():
    a = T.Tensor(np.array([1.0]), requires_grad=True)
    x = a
    for _ in range(3000):
        x = T.scale(x, 1.0)
    T.sum_all(x).backward()
    assert a.grad[0] == pytest.approx(1.0)


def test_matmul_rejects_non_2d(rng):
    a, b = _rand(rng, 2, 3, 4), _rand(rng, 4, 2)
    with pytest.raises(ShapeError):
        T.matmul(a, b)


# -- RNG and initialization --------------------------------------------------

def test_rngstate_deterministic():
    a = T.RngState(42).standard_normal((4, 4))
    b = T.RngState(42).standard_normal((4, 4))
    np.testing.assert_array_equal(a, b)


def test_rngstate_children_differ():
    root = T.RngState(7)
    c0 = root.child(0).standard_normal((8,))
    c1 = root.child(1).standard_normal((8,))
    assert not np.array_equal(c0, c1)
    # children are a pure function of (seed, index), not of draw order
    again = T.RngState(7).child(0).standard_normal((8,))
    np.testing.assert_array_equal(c0, again)


def test_trunc_normal_bounds_and_moments():
    std = 4e-3
    rng = T.RngState(123)
    x = T.trunc_normal((1_000_000,), mean=0.0, std=std, rng=rng)
    assert np.all(np.abs(x) <= 2 * std + 1e-15)
    assert abs(x.mean()) < 3e-5
    want_sd = truncated_normal_sd(std)          # scipy truncnorm oracle
    assert want_sd == pytest.approx(0.87962 * std, rel=1e-4)
    assert x.std() == pytest.approx(want_sd, rel=2e-3)
    # the published-style sanity band used elsewhere in the suite
    assert 0.86 * std < x.std() < 0.90 * std


def test_trunc_normal_deterministic():
    a = T.trunc_normal((64, 64), 0.0, 0.02, T.RngState(9))
    b = T.trunc_normal((64, 64), 0.0, 0.02, T.RngState(9))
    np.testing.assert_array_equal(a, b)
