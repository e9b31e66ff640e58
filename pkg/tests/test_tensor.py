import numpy as np
import pytest

from vidattn import functional as F
from vidattn.gradcheck import grad_check
from vidattn.tensor import Tensor, _topo_order, backward, no_grad, zero_grad


def test_relu_sum_gradient():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    backward(F.sum(F.relu(x)))
    np.testing.assert_array_equal(x.grad, [1.0, 0.0])


def test_product_rule():
    a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    b = Tensor(np.array([4.0, -5.0, 6.0]), requires_grad=True)
    backward(F.sum(a * b))
    np.testing.assert_array_equal(a.grad, b.data)
    np.testing.assert_array_equal(b.grad, a.data)


def test_gradient_table_includes_unreachable_params():
    a = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    grads = backward(F.sum(a * 2.0), {"a": a, "unused": unused})
    np.testing.assert_array_equal(grads["a"], [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2.0)


def test_diamond_graph_visits_each_node_once():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * 2.0
    z = y * y + y  # y feeds two consumers
    order = _topo_order(F.sum(z))
    assert len(order) == len({id(n) for n in order})
    backward(F.sum(z))
    # dz/dx = (2y + 1) * 2 at y = 6
    np.testing.assert_allclose(x.grad, [26.0])


def test_gradient_shapes_match_values():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3)), requires_grad=True)
    w = Tensor(np.random.default_rng(1).standard_normal((4, 3)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    backward(F.sum(F.tanh(F.dense(x, w, b))))
    for t in (x, w, b):
        assert t.grad.shape == t.shape


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = F.relu(x * 3.0)
    assert not y.requires_grad and y._parents == ()


def test_zero_grad_clears():
    x = Tensor(np.ones(2), requires_grad=True)
    backward(F.sum(x * x))
    zero_grad([x])
    assert x.grad is None


def test_broadcast_add_reduces_gradient():
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    backward(F.sum(x + b))
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_forward_bit_identical_across_runs():
    rng = np.random.default_rng(5)
    x, w, b = rng.standard_normal((2, 3, 9, 9)), rng.standard_normal((4, 3, 5, 5)), rng.standard_normal(4)
    a = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    c = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    assert a.tobytes() == c.tobytes()


def test_grad_check_linear_is_exact():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 4))
    err = grad_check(lambda x: F.matmul(x, Tensor(w)), [rng.standard_normal((2, 3))])
    assert err < 1e-9


def test_grad_check_detects_wrong_gradient():
    from vidattn.tensor import make_node

    def bad_square(x):
        return make_node(x.data ** 2, (x,), lambda g: (g * x.data,), "bad")  # missing factor 2

    err = grad_check(bad_square, [np.array([1.0, 2.0, 3.0])])
    assert err > 0.4


def test_composite_graph_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 1, 6, 6))
    w = rng.standard_normal((2, 1, 3, 3)) * 0.5
    b = rng.standard_normal(2) * 0.1
    fw = rng.standard_normal((3, 72)) * 0.2
    labels = np.array([0, 2])

    def net(x_, w_, b_, fw_):
        h = F.tanh(F.conv2d(x_, w_, b_))
        logits = F.dense(F.flatten(h), fw_, Tensor(np.zeros(3)))
        return F.softmax_cross_entropy(logits, labels)[0]

    assert grad_check(net, [x, w, b, fw]) < 1e-5
