import numpy as np
import pytest

from bgdepth.autodiff import (
    Tape,
    Tensor,
    conv2d,
    conv3d,
    conv_transpose2d,
    conv_transpose3d,
    maxpool2d,
    maxpool3d,
    sum,
)
from bgdepth.autodiff.conv import conv_nd
from bgdepth.autodiff.gradcheck import grad_check
from bgdepth.autodiff.ops import mse, scale
from bgdepth.exceptions import ShapeError


def brute_force_conv3d(x, w, b, stride, pad):
    n, c, *spatial = x.shape
    f, _, *kernel = w.shape
    xp = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * 3)
    out_shape = [(s + 2 * pad - k) // stride + 1 for s, k in zip(spatial, kernel)]
    out = np.zeros([n, f] + out_shape)
    for i in range(n):
        for j in range(f):
            for z in range(out_shape[0]):
                for y in range(out_shape[1]):
                    for x_ in range(out_shape[2]):
                        window = xp[i, :, z * stride:z * stride + kernel[0], y * stride:y * stride + kernel[1],
                                    x_ * stride:x_ * stride + kernel[2]]
                        out[i, j, z, y, x_] = (window * w[j]).sum() + b[j]
    return out


def test_all_ones_conv3d_center_is_27():
    x = Tensor(np.ones((1, 1, 3, 3, 3)))
    w = Tensor(np.ones((1, 1, 5, 5, 5)))
    out = conv3d(x, w, Tensor(np.zeros(1)), stride=1, pad=2)
    assert out.shape == (1, 1, 3, 3, 3)
    assert out.data[0, 0, 1, 1, 1] == 27.0


def test_delta_kernel_is_identity(rng):
    x = Tensor(rng.standard_normal((1, 1, 4, 4, 4)))
    kernel = np.zeros((1, 1, 5, 5, 5))
    kernel[0, 0, 2, 2, 2] = 1.0
    np.testing.assert_array_equal(conv3d(x, Tensor(kernel), pad=2).data, x.data)


@pytest.mark.parametrize("stride, pad", [(1, 0), (1, 2), (2, 1)])
def test_conv3d_matches_brute_force(rng, stride, pad):
    x = rng.standard_normal((2, 2, 5, 4, 6))
    w = rng.standard_normal((3, 2, 3, 3, 3))
    b = rng.standard_normal(3)
    expected = brute_force_conv3d(x, w, b, stride, pad)
    out = conv3d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("stride, pad", [(1, 0), (1, 1), (2, 1)])
def test_im2col_agrees_bitwise_with_direct(seed, stride, pad):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 5, 4, 6))
    w = rng.standard_normal((3, 2, 3, 3, 3))
    b = rng.standard_normal(3)
    direct = conv3d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad, method="direct").data
    im2col = conv3d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad, method="im2col").data
    assert np.array_equal(direct, im2col)
    x2 = rng.standard_normal((1, 3, 7, 6))
    w2 = rng.standard_normal((2, 3, 3, 3))
    assert np.array_equal(
        conv2d(Tensor(x2), Tensor(w2), stride=stride, pad=pad, method="direct").data,
        conv2d(Tensor(x2), Tensor(w2), stride=stride, pad=pad, method="im2col").data,
    )


def test_conv2d_of_ones_center_is_nine():
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), pad=1)
    assert out.data[0, 0, 1, 1] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


def test_conv_rejects_unknown_method_and_bad_shapes():
    x = Tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        conv_nd(x, Tensor(np.ones((1, 2, 3, 3))), method="fft")
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.ones((1, 2, 5, 5))))
    with pytest.raises(ShapeError):
        conv3d(x, Tensor(np.ones((1, 2, 3, 3))))


def test_conv3d_gradients_match_finite_differences(rng):
    x = Tensor(rng.standard_normal((1, 1, 4, 4, 4)))
    w = Tensor(rng.standard_normal((2, 1, 3, 3, 3)))
    b = Tensor(rng.standard_normal(2))
    target = rng.standard_normal((1, 2, 4, 4, 4))
    assert grad_check(lambda x, w, b: mse(conv3d(x, w, b, pad=1), target), [x, w, b]) <= 1e-6


@pytest.mark.parametrize("extent", [1, 3, 4])
def test_transposed_conv_doubles_extent(extent):
    out = conv_transpose3d(Tensor(np.ones((1, 2, extent, extent, extent))), Tensor(np.ones((2, 1, 4, 4, 4))))
    assert out.shape == (1, 1, 2 * extent, 2 * extent, 2 * extent)
    out2d = conv_transpose2d(Tensor(np.ones((1, 2, extent, 5))), Tensor(np.ones((2, 3, 4, 4))))
    assert out2d.shape == (1, 3, 2 * extent, 10)


def test_transposed_conv_is_the_adjoint_of_conv(rng):
    x = rng.standard_normal((1, 2, 6, 6))
    y = rng.standard_normal((1, 3, 3, 3))
    w = rng.standard_normal((3, 2, 4, 4))
    forward = conv2d(Tensor(x), Tensor(w), stride=2, pad=1).data
    adjoint = conv_transpose2d(Tensor(y), Tensor(w), stride=2, pad=1).data
    assert np.vdot(forward, y) == pytest.approx(np.vdot(x, adjoint), rel=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_transposed_conv3d_is_the_adjoint_of_conv3d(seed):
    rng = np.random.default_rng(seed)
    batch, channels, filters = rng.integers(1, 3, size=3)
    extent = 2 * rng.integers(1, 4, size=3)
    x = rng.standard_normal((batch, channels, *extent))
    w = rng.standard_normal((filters, channels, 4, 4, 4))
    y = rng.standard_normal((batch, filters, *(extent // 2)))
    forward = conv3d(Tensor(x), Tensor(w), stride=2, pad=1).data
    assert forward.shape == y.shape
    adjoint = conv_transpose3d(Tensor(y), Tensor(w), stride=2, pad=1).data
    assert adjoint.shape == x.shape
    assert np.vdot(forward, y) == pytest.approx(np.vdot(x, adjoint), rel=1e-9, abs=1e-9)


def test_maxpool_block_maximum_and_gradient_routing():
    block = np.array([1.0, 5.0, 3.0, 2.0, 0.0, 0.0, 0.0, 0.0]).reshape(1, 1, 2, 2, 2)
    x = Tensor(block, requires_grad=True)
    with Tape() as tape:
        out = maxpool3d(x)
        loss = sum(scale(out, 2.0))
    assert out.data.reshape(-1).tolist() == [5.0]
    tape.backward(loss)
    expected = np.zeros(8)
    expected[1] = 2.0
    np.testing.assert_array_equal(x.grad.reshape(-1), expected)


def test_maxpool_ties_go_to_the_first_element():
    x = Tensor(np.full((1, 1, 2, 2), 3.0), requires_grad=True)
    with Tape() as tape:
        loss = sum(maxpool2d(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_of_increasing_ramp_takes_last_corner():
    ramp = np.arange(64.0).reshape(1, 1, 4, 4, 4)
    out = maxpool3d(Tensor(ramp)).data
    np.testing.assert_array_equal(out, ramp[:, :, 1::2, 1::2, 1::2])


def test_maxpool_requires_divisible_extents():
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(np.ones((1, 1, 3, 4))))
