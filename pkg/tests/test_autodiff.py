import numpy as np
import pytest

import sepxfer.autodiff as ad


def grad_of(loss_node, param):
    ad.backward(loss_node)
    return param.grad


def test_sigmoid_value_and_adjoint_at_zero():
    x = ad.leaf(np.zeros(3), dtype=np.float64)
    y = ad.sigmoid(x)
    assert np.allclose(y.value, 0.5)
    ad.backward(ad.sum_(y))
    assert np.allclose(x.grad, 0.25)


def test_softmax_of_zeros_is_uniform():
    y = ad.softmax(ad.constant([0.0, 0.0, 0.0]), axis=0)
    assert np.allclose(y.value, 1 / 3)


def test_frobenius_gradient():
    p = ad.leaf(np.array([1.0, 2.0]))
    ad.backward(ad.frob_norm_sq(p))
    assert np.allclose(p.grad, [2.0, 4.0])


def test_sum_gradient_is_ones():
    p = ad.leaf(np.random.default_rng(0).standard_normal((3, 4)))
    ad.backward(ad.sum_(p))
    assert np.array_equal(p.grad, np.ones((3, 4)))


def test_sum_of_squares_gradient():
    v = np.random.default_rng(1).standard_normal(5)
    p = ad.leaf(v)
    ad.backward(ad.sum_(p * p))
    assert np.allclose(p.grad, 2 * v)


def test_fanout_accumulates_exactly_twice():
    v = np.random.default_rng(2).standard_normal(4)

    def f(node):
        return ad.sum_(ad.square(node))

    p = ad.leaf(v.copy())
    ad.backward(f(p))
    single = p.grad.copy()

    q = ad.leaf(v.copy())
    ad.backward(f(q) + f(q))
    assert np.array_equal(q.grad, 2 * single)


def test_backward_rejects_nonscalar_loss():
    p = ad.leaf(np.ones(3))
    with pytest.raises(ValueError):
        ad.backward(p * p)


def test_shape_mismatch_raises():
    a = ad.constant(np.ones((2, 3)))
    b = ad.constant(np.ones((4, 5)))
    with pytest.raises(ValueError):
        ad.add(a, b)
    with pytest.raises(ValueError):
        ad.matmul(a, b)


def test_constant_nodes_get_no_gradient():
    c = ad.constant(np.ones(3))
    p = ad.leaf(np.ones(3))
    ad.backward(ad.sum_(c * p))
    assert c.grad is None
    assert np.allclose(p.grad, 1.0)


def test_matmul_batched_gradients_match_loop():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 4, 2))
    w = rng.standard_normal((2, 5))
    pw = ad.Parameter("w", w.copy())
    loss = ad.frob_norm_sq(ad.constant(a) @ pw.node)
    ad.backward(loss)
    batched = pw.grad.copy()

    manual = np.zeros_like(w)
    for b in range(3):
        out = a[b] @ w
        manual += a[b].T @ (2 * out)
    assert np.allclose(batched, manual, atol=1e-10)


def test_finite_difference_on_composite_graph():
    rng = np.random.default_rng(4)
    w1 = ad.Parameter("w1", rng.standard_normal((5, 4)))
    w2 = ad.Parameter("w2", rng.standard_normal((8, 3)))
    c = ad.constant(rng.standard_normal((6, 5)))

    def loss_fn():
        h = ad.tanh(c @ w1.node)
        n = ad.l2_normalize(ad.sigmoid(h), axis=1)
        cat = ad.concatenate([ad.softmax(n * 3.0, axis=0), n], axis=0)
        sl = cat[2:10, :3] * w2.node
        r = ad.reshape(ad.transpose(sl), (3, 8))
        lg = ad.log(ad.sqrt(ad.square(r) + 0.3))
        return ad.frob_norm_sq(lg @ ad.transpose(lg)) + ad.mean(sl)

    assert ad.finite_difference_check(loss_fn, [w1, w2], step=1e-5) < 1e-6


def test_finite_difference_linear_is_near_exact():
    p = ad.Parameter("p", np.random.default_rng(5).uniform(0.2, 0.8, 5))
    err = ad.finite_difference_check(lambda: ad.sum_(p.node * 3.0), [p], step=1e-5)
    assert err < 1e-10


def test_finite_difference_subsamples_large_params():
    rng = np.random.default_rng(6)
    big = ad.Parameter("big", rng.standard_normal((40, 40)))
    err = ad.finite_difference_check(lambda: ad.frob_norm_sq(big.node), [big],
                                     step=1e-5, max_coords=200)
    assert err < 1e-4


def test_forward_determinism():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 4))

    def build():
        return ad.softmax(ad.tanh(ad.constant(x) @ ad.constant(x)), axis=1).value

    assert np.array_equal(build(), build())


def test_frozen_parameter_requires_no_grad():
    p = ad.Parameter("p", np.ones(3))
    p.freeze()
    loss = ad.sum_(p.node * 2.0)
    ad.backward(loss)
    assert p.grad is None
    p.unfreeze()
    ad.backward(ad.sum_(p.node * 2.0))
    assert np.allclose(p.grad, 2.0)


def test_concatenate_and_slice_gradients():
    a = ad.Parameter("a", np.arange(4.0))
    b = ad.Parameter("b", np.arange(3.0))
    cat = ad.concatenate([a.node, b.node], axis=0)
    ad.backward(ad.sum_(cat[2:6] * 3.0))
    assert np.allclose(a.grad, [0, 0, 3, 3])
    assert np.allclose(b.grad, [3, 3, 0])


def test_mean_over_axis():
    p = ad.leaf(np.ones((2, 5)))
    out = ad.mean(p, axis=1)
    assert out.shape == (2,)
    ad.backward(ad.sum_(out))
    assert np.allclose(p.grad, 0.2)


def test_division_by_scalar_only():
    p = ad.leaf(np.ones(2))
    assert np.allclose((p / 4.0).value, 0.25)
    with pytest.raises(TypeError):
        p / p
