import numpy as np
import pytest
import torch
import torchvision

from oracles import affine_point, bilinear_kernel_sample
from vidattn import functional as F
from vidattn.attention import (IDENTITY_THETA, deformable_conv, localization_forward, offset_channels,
                               offset_conv_forward, stn_forward)
from vidattn.networks import ModelSpec, build_backbone
from vidattn.tensor import Tensor


@pytest.fixture(scope="module")
def stn_params():
    return build_backbone(ModelSpec.reduced("stn"), np.random.default_rng(0), dtype=np.float64)


@pytest.fixture(scope="module")
def images():
    return np.random.default_rng(1).random((3, 1, 64, 64))


def resize_corner_aligned(x, size):
    t = torch.nn.functional.interpolate(torch.tensor(x), size=(size, size), mode="bilinear", align_corners=True)
    return t.numpy()


def test_fresh_localization_outputs_identity(stn_params, images):
    theta = localization_forward(Tensor(images), stn_params).data
    assert theta.shape == (3, 2, 3)
    np.testing.assert_array_equal(theta, np.broadcast_to(IDENTITY_THETA, (3, 2, 3)))


def test_theta_has_six_components(stn_params, images):
    assert localization_forward(Tensor(images[0]), stn_params).data.size == 6


def test_final_bias_shifts_theta_exactly(stn_params, images):
    p = stn_params.copy()
    p["loc.fc1.w"].data[:] = np.random.default_rng(2).standard_normal(p["loc.fc1.w"].shape) * 0.01
    p["loc.fc2.w"].data[:] = np.random.default_rng(3).standard_normal(p["loc.fc2.w"].shape) * 0.01
    before = localization_forward(Tensor(images), p).data
    delta = np.array([0.1, -0.2, 0.05, 0.3, 0.0, -0.07])
    p["loc.fc2.b"].data += delta
    after = localization_forward(Tensor(images), p).data
    np.testing.assert_allclose(after - before, np.broadcast_to(delta.reshape(2, 3), before.shape), atol=1e-12)


def test_localization_rejects_wrong_size(stn_params):
    with pytest.raises(ValueError, match="expects"):
        localization_forward(Tensor(np.zeros((1, 1, 32, 32))), stn_params)


def test_identity_stn_is_bilinear_resize(stn_params, images):
    out = stn_forward(Tensor(images), stn_params).data
    assert out.shape == (3, 1, 32, 32)
    assert np.abs(out - resize_corner_aligned(images, 32)).max() < 1e-5


def test_half_theta_zooms_into_centre(images):
    theta = 0.5 * IDENTITY_THETA
    out = stn_forward(Tensor(images[:1]), {}, theta=Tensor(theta)).data[0, 0]
    pts = np.array([[affine_point(theta, i, j, 32, 32, 64, 64) for j in range(32)] for i in range(32)])
    ref = bilinear_kernel_sample(images[0], pts[..., 0], pts[..., 1])[0]
    assert np.abs(out - ref).max() < 1e-5
    assert pts[..., 0].min() == pytest.approx(15.75) and pts[..., 0].max() == pytest.approx(47.25)


@pytest.mark.parametrize("variant_size", [16, 28, 32])
def test_stn_output_size_is_fixed_by_argument(images, variant_size):
    out = stn_forward(Tensor(images[:1]), {}, out_size=variant_size, theta=Tensor(IDENTITY_THETA))
    assert out.shape == (1, 1, variant_size, variant_size)


def test_zero_offset_conv_gives_zero_field():
    x = Tensor(np.random.default_rng(4).standard_normal((2, 3, 9, 9)))
    for k in (3, 5):
        w, b = np.zeros((offset_channels(k), 3, k, k)), np.zeros(offset_channels(k))
        field = offset_conv_forward(x, Tensor(w), Tensor(b), k)
        assert field.shape == (2, 2 * k * k, 9, 9)
        assert not field.data.any()
    assert offset_channels(5) == 50


def test_offset_conv_validates_channels():
    with pytest.raises(ValueError, match="50 outputs"):
        offset_conv_forward(Tensor(np.zeros((1, 1, 8, 8))), Tensor(np.zeros((18, 1, 5, 5))), Tensor(np.zeros(18)), 5)


def test_zero_offsets_equal_conv():
    rng = np.random.default_rng(5)
    for _ in range(10):
        x, w, b = rng.standard_normal((2, 3, 10, 9)), rng.standard_normal((4, 3, 5, 5)), rng.standard_normal(4)
        ref = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        y = deformable_conv(Tensor(x), Tensor(w), Tensor(b), Tensor(np.zeros((2, 50, 10, 9)))).data
        assert np.abs(y - ref).max() < 1e-6


def test_unit_row_offset_is_a_shift():
    rng = np.random.default_rng(6)
    x, w, b = rng.standard_normal((1, 2, 12, 12)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    off = np.zeros((1, 18, 12, 12))
    off[:, 0::2] = 1.0  # every tap reads one row further down
    y = deformable_conv(Tensor(x), Tensor(w), Tensor(b), Tensor(off)).data
    shifted = np.zeros_like(x)
    shifted[:, :, :-1] = x[:, :, 1:]
    ref = F.conv2d(Tensor(shifted), Tensor(w), Tensor(b)).data
    # interior rows, away from the bottom edge where the shift reads padding
    assert np.abs(y[:, :, 1:-2, 1:-1] - ref[:, :, 1:-2, 1:-1]).max() < 1e-9


def test_single_tap_fractional_offset_is_bilinear_read():
    x = np.random.default_rng(7).standard_normal((1, 1, 6, 6))
    off = np.zeros((1, 2, 6, 6))
    off[0, 0, 2, 3], off[0, 1, 2, 3] = 0.3, -0.6
    y = deformable_conv(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), Tensor(off)).data
    ref = bilinear_kernel_sample(x[0], np.array([2.3]), np.array([2.4]))[0, 0]
    assert abs(y[0, 0, 2, 3] - ref) < 1e-12


def test_deformable_matches_torchvision():
    rng = np.random.default_rng(8)
    x, w, b = rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    off = rng.standard_normal((2, 18, 8, 8)) * 1.5
    y = deformable_conv(Tensor(x), Tensor(w), Tensor(b), Tensor(off)).data
    ref = torchvision.ops.deform_conv2d(torch.tensor(x), torch.tensor(off), torch.tensor(w), torch.tensor(b),
                                        padding=1).numpy()
    assert np.abs(y - ref).max() < 1e-10


def test_deformable_shape_errors():
    x = Tensor(np.zeros((1, 2, 6, 6)))
    with pytest.raises(ValueError, match="offset field"):
        deformable_conv(x, Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros(1)), Tensor(np.zeros((1, 9, 6, 6))))
    with pytest.raises(ValueError, match="input channels"):
        deformable_conv(x, Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)), Tensor(np.zeros((1, 18, 6, 6))))
