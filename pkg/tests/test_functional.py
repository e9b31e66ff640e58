import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import affine_point, bilinear_kernel_sample, conv2d_loops, maxpool_scan
from vidattn import functional as F
from vidattn.tensor import Tensor, backward

finite = st.floats(-50, 50, allow_nan=False, width=64)


# ---------------------------------------------------------------- conv2d

def test_conv_scalar_kernel():
    y = F.conv2d(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])), Tensor(np.full((1, 1, 1, 1), 2.0)),
                 Tensor(np.array([1.0])))
    np.testing.assert_array_equal(y.data, [[[3.0, 5.0], [7.0, 9.0]]])


def test_conv_5x5_samples_the_centred_grid():
    # a one-hot input reveals which kernel taps touch output (p0) - the grid is offsets -2..2
    x = np.zeros((1, 9, 9))
    x[0, 4, 4] = 1.0
    w = np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5)
    y = F.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1))).data[0]
    for dr in range(-2, 3):
        for dc in range(-2, 3):
            # y(p0) picks w(pn) * x(p0 + pn); x is nonzero at p0 + pn = (4, 4)
            assert y[4 - dr, 4 - dc] == w[0, 0, dr + 2, dc + 2]


def test_conv_valid_matches_nested_loops():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((1, 6, 6)), rng.standard_normal((2, 1, 3, 3)), rng.standard_normal(2)
    y = F.conv2d(Tensor(x), Tensor(w), Tensor(b), padding="valid").data
    assert np.abs(y - conv2d_loops(x, w, b)).max() < 1e-6


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_same_matches_nested_loops_with_tf_padding(stride):
    rng = np.random.default_rng(stride)
    x, w, b = rng.standard_normal((3, 8, 7)), rng.standard_normal((2, 3, 5, 5)), rng.standard_normal(2)
    ho, wo, pad = F.conv_geometry(8, 7, 5, stride, "same")
    assert (ho, wo) == (math.ceil(8 / stride), math.ceil(7 / stride))
    y = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
    assert np.abs(y - conv2d_loops(x, w, b, stride, pad)).max() < 1e-9


def test_conv_matches_torch_at_stride_one():
    rng = np.random.default_rng(1)
    x, w, b = rng.standard_normal((2, 3, 11, 9)), rng.standard_normal((4, 3, 5, 5)), rng.standard_normal(4)
    y = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    ref = torch.nn.functional.conv2d(torch.tensor(x), torch.tensor(w), torch.tensor(b), padding=2).numpy()
    assert np.abs(y - ref).max() < 1e-10


@given(st.integers(1, 12), st.integers(1, 12), st.sampled_from([1, 3, 5]))
@settings(max_examples=30, deadline=None)
def test_same_padding_preserves_extent(h, w, k):
    x = Tensor(np.ones((1, 1, h, w)))
    y = F.conv2d(x, Tensor(np.ones((2, 1, k, k))), Tensor(np.zeros(2)))
    assert y.shape == (1, 2, h, w)


def test_conv_errors_name_the_dimension():
    x = Tensor(np.ones((2, 5, 5)))
    with pytest.raises(ValueError, match="input channels 2"):
        F.conv2d(x, Tensor(np.ones((1, 3, 3, 3))), Tensor(np.zeros(1)))
    with pytest.raises(ValueError, match="odd"):
        F.conv2d(x, Tensor(np.ones((1, 2, 2, 2))), Tensor(np.zeros(1)))
    with pytest.raises(ValueError, match="bias"):
        F.conv2d(x, Tensor(np.ones((1, 2, 3, 3))), Tensor(np.zeros(2)))


# ---------------------------------------------------------------- maxpool

def test_maxpool_examples():
    y = F.maxpool2d(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])), 2, 2)
    np.testing.assert_array_equal(y.data, [[[4.0]]])
    c = F.maxpool2d(Tensor(np.full((1, 6, 6), 7.5)), 2)
    np.testing.assert_array_equal(c.data, np.full((1, 3, 3), 7.5))


def test_maxpool_matches_window_scan():
    x = np.random.default_rng(2).standard_normal((3, 8, 8))
    for k, s in ((2, 2), (3, 1), (3, 2)):
        np.testing.assert_array_equal(F.maxpool2d(Tensor(x), k, s).data, maxpool_scan(x, k, s))


def test_maxpool_tie_routes_to_first():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    backward(F.sum(F.maxpool2d(x, 2)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_window_too_large():
    with pytest.raises(ValueError, match="larger than input"):
        F.maxpool2d(Tensor(np.ones((1, 3, 3))), 4)


# ---------------------------------------------------------------- dense and activations

def test_dense_identity_and_bias():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(F.dense(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)
    np.testing.assert_array_equal(F.dense(Tensor(x), Tensor(np.zeros((2, 3))), Tensor(np.ones(2))).data, [1, 1])


def test_dense_matches_dot_loop():
    rng = np.random.default_rng(3)
    w, x, b = rng.standard_normal((4, 6)), rng.standard_normal(6), rng.standard_normal(4)
    ref = [sum(w[i, j] * x[j] for j in range(6)) + b[i] for i in range(4)]
    assert np.abs(F.dense(Tensor(x), Tensor(w), Tensor(b)).data - ref).max() < 1e-6


def test_dense_dimension_mismatch():
    with pytest.raises(ValueError, match="input dimension"):
        F.dense(Tensor(np.ones(3)), Tensor(np.ones((2, 4))), Tensor(np.zeros(2)))


def test_activation_values():
    assert F.sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
    assert F.tanh(Tensor(np.array([0.0]))).data[0] == 0.0
    np.testing.assert_array_equal(F.relu(Tensor(np.array([-3.0, 2.0]))).data, [0.0, 2.0])


@given(arrays(np.float64, 16, elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_activation_ranges(x):
    s = F.sigmoid(Tensor(x)).data
    t = F.tanh(Tensor(x)).data
    assert np.all((s >= 0) & (s <= 1)) and np.all(np.isfinite(s))
    assert np.all((t >= -1) & (t <= 1))
    # strict inside the range where double precision can still tell
    mid = np.abs(x) < 15
    assert np.all((s[mid] > 0) & (s[mid] < 1)) and np.all(np.abs(t[mid]) < 1)


# ---------------------------------------------------------------- softmax cross entropy

def test_uniform_logits_loss():
    loss, probs = F.softmax_cross_entropy(Tensor(np.zeros(100)), 17)
    assert abs(loss.item() - math.log(100)) < 1e-12
    np.testing.assert_allclose(probs, 0.01)


def test_saturated_logits_loss():
    z = np.zeros(10)
    z[3] = 1e6
    loss, _ = F.softmax_cross_entropy(Tensor(z), 3)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_xent_matches_direct_formula():
    z = np.random.default_rng(4).standard_normal(10)
    loss, probs = F.softmax_cross_entropy(Tensor(z), 6)
    p = np.exp(z) / np.exp(z).sum()
    assert abs(loss.item() + math.log(p[6])) < 1e-6
    assert np.abs(probs - p).max() < 1e-6


def test_xent_label_range():
    with pytest.raises(ValueError, match="out of range"):
        F.softmax_cross_entropy(Tensor(np.zeros(5)), 5)


@given(arrays(np.float64, (3, 7), elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_softmax_sums_to_one(z):
    _, probs = F.softmax_cross_entropy(Tensor(z), np.zeros(3, dtype=int))
    assert np.all(np.abs(probs.sum(axis=-1) - 1) < 1e-6)


# ---------------------------------------------------------------- affine grid and bilinear sampling

IDENTITY = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def test_identity_grid_is_pixel_lattice():
    g = F.affine_grid(Tensor(IDENTITY), 7, 9, 7, 9).data
    rr, cc = np.meshgrid(np.arange(7.0), np.arange(9.0), indexing="ij")
    assert np.array_equal(g[..., 0], rr) and np.array_equal(g[..., 1], cc)


def test_half_scale_grid_spans_central_half():
    g = F.affine_grid(Tensor(0.5 * IDENTITY), 5, 5, 9, 9).data
    assert g[..., 0].min() == 2.0 and g[..., 0].max() == 6.0
    assert g[..., 1].min() == 2.0 and g[..., 1].max() == 6.0


def test_grid_matches_matrix_vector_oracle():
    rng = np.random.default_rng(5)
    for _ in range(5):
        th = rng.standard_normal((2, 3))
        g = F.affine_grid(Tensor(th), 4, 6, 8, 5).data
        for i in range(4):
            for j in range(6):
                assert np.abs(np.array(affine_point(th, i, j, 4, 6, 8, 5)) - g[i, j]).max() < 1e-6


def test_grid_agrees_with_torch_convention():
    th = np.random.default_rng(6).standard_normal((2, 2, 3))
    g = F.affine_grid(Tensor(th), 4, 5, 7, 8).data
    t = torch.nn.functional.affine_grid(torch.tensor(th), (2, 1, 4, 5), align_corners=True).numpy()
    assert np.abs(g[..., 1] - (t[..., 0] + 1) / 2 * 7).max() < 1e-12
    assert np.abs(g[..., 0] - (t[..., 1] + 1) / 2 * 6).max() < 1e-12


def test_bilinear_integer_and_midpoint():
    x = np.arange(12, dtype=np.float64).reshape(1, 3, 4)
    grid = np.array([[[1.0, 2.0], [2.0, 3.0], [0.0, 0.0]]])
    np.testing.assert_array_equal(F.bilinear_sample(Tensor(x), Tensor(grid)).data[0, 0], [6.0, 11.0, 0.0])
    m = np.array([[[2.0, 4.0]]])
    assert F.bilinear_sample(Tensor(m), Tensor(np.array([[[0.0, 0.5]]]))).data[0, 0, 0] == 3.0


def test_bilinear_matches_kernel_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 5, 6))
    grid = rng.uniform(-1.5, 7.0, (3, 4, 2))
    y = F.bilinear_sample(Tensor(x), Tensor(grid)).data
    assert np.abs(y - bilinear_kernel_sample(x, grid[..., 0], grid[..., 1])).max() < 1e-6


def test_bilinear_matches_torch_grid_sample():
    rng = np.random.default_rng(8)
    img, grid = rng.standard_normal((2, 2, 7, 8)), rng.uniform(-1.5, 8.5, (2, 4, 5, 2))
    y = F.bilinear_sample(Tensor(img), Tensor(grid)).data
    g = torch.tensor(grid[..., ::-1].copy())
    g[..., 0] = g[..., 0] / 7 * 2 - 1
    g[..., 1] = g[..., 1] / 6 * 2 - 1
    ref = torch.nn.functional.grid_sample(torch.tensor(img), g, padding_mode="zeros", align_corners=True)
    assert np.abs(y - ref.numpy()).max() < 1e-12


def test_identity_warp_reproduces_input_exactly():
    x = np.random.default_rng(9).random((3, 10, 12)).astype(np.float32)
    y = F.bilinear_sample(Tensor(x), F.affine_grid(Tensor(IDENTITY), 10, 12, 10, 12)).data
    assert np.array_equal(x, y)


def test_far_out_of_bounds_reads_zero():
    x = np.ones((1, 4, 4))
    y = F.bilinear_sample(Tensor(x), Tensor(np.array([[[-5.0, 1.0], [1.0, 9.0], [-1.0, -1.0]]])))
    np.testing.assert_array_equal(y.data, 0.0)
