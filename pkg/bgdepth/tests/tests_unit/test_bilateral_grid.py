import struct

import numpy as np
import pytest

from bgdepth.exceptions import DimensionMismatchError, GridFormatError, ImageValueError
from bgdepth.grid import (
    BilateralGrid,
    DenseGrid,
    GridParams,
    bilateral_filter,
    gaussian_kernel,
    grid_blur,
    lift_gray,
    lift_rgb,
    normalize,
    read_grid,
    slice,
    summarize,
    write_grid,
)
from bgdepth.grid.bilateral_grid import splat_indices
from bgdepth.imaging import ImageGray, ImageRGB


def test_hand_splat_two_by_two():
    image = ImageGray(np.array([[0.0, 0.3], [0.6, 0.9]]))
    grid = lift_gray(image, GridParams(sr_s=1, n_bins=4))
    assert grid.shape == (2, 2, 4)
    expected_bins = {(0, 0): 0, (0, 1): 1, (1, 0): 2, (1, 1): 3}
    for (y, x), b in expected_bins.items():
        assert grid.weight[y, x, b] == 1.0
        assert grid.value_sum[y, x, b] == pytest.approx(image.data[y, x])
    assert grid.weight.sum() == 4.0


def test_constant_image_concentrates_in_one_bin():
    p = GridParams(sr_s=2, n_bins=8)
    grid = lift_gray(ImageGray(np.full((6, 10), 0.4)), p)
    target_bin = round(0.4 * 7)
    assert grid.weight.sum() == 60.0
    assert grid.weight[:, :, target_bin].sum() == 60.0
    assert grid.value_sum.sum() == pytest.approx(60 * 0.4)


def test_grid_extents_for_vga_input():
    p = GridParams(sr_s=4, n_bins=32)
    assert p.dims(640, 480) == (160, 120, 32)
    assert p.array_shape(640, 480) == (120, 160, 32)
    assert GridParams.from_range_sampling_rate(8).n_bins == 32
    assert GridParams.from_range_sampling_rate(4).n_bins == 64


def test_grid_dims_report_width_first():
    grid = lift_gray(ImageGray(np.zeros((4, 8))), GridParams(sr_s=2, n_bins=4))
    assert grid.dims == (4, 2, 4)


def test_pure_red_separates_channels():
    image = ImageRGB(np.tile([1.0, 0.0, 0.0], (4, 4, 1)))
    red, green, blue = lift_rgb(image, GridParams(sr_s=2, n_bins=8))
    assert red.weight[:, :, -1].sum() == 16.0
    assert green.weight[:, :, 0].sum() == 16.0
    assert blue.weight[:, :, 0].sum() == 16.0


def test_lift_rgb_matches_channel_lifts(rng):
    image = ImageRGB(rng.uniform(0.0, 1.0, (6, 6, 3)))
    p = GridParams(sr_s=2, n_bins=8)
    for channel, grid in enumerate(lift_rgb(image, p)):
        single = lift_gray(image.channel(channel), p)
        np.testing.assert_array_equal(grid.weight, single.weight)
        np.testing.assert_array_equal(grid.value_sum, single.value_sum)


def test_normalize_voxel_average_and_empty_voxels():
    value_sum = np.zeros((1, 1, 2))
    weight = np.zeros((1, 1, 2))
    value_sum[0, 0, 0], weight[0, 0, 0] = 0.9, 3.0
    dense = normalize(BilateralGrid(value_sum, weight))
    assert dense.value[0, 0, 0] == pytest.approx(0.3)
    assert dense.occupancy[0, 0, 0]
    assert dense.value[0, 0, 1] == 0.0
    assert not dense.occupancy[0, 0, 1]


def test_slice_constant_image_is_exact():
    p = GridParams(sr_s=2, n_bins=8)
    image = ImageGray(np.full((7, 9), 0.37))
    np.testing.assert_allclose(slice(normalize(lift_gray(image, p)), image, p).data, 0.37, atol=1e-12)


@pytest.mark.parametrize("bins", [4, 8, 16])
def test_slice_at_full_resolution_is_within_half_bin(rng, bins):
    p = GridParams(sr_s=1, n_bins=bins)
    image = ImageGray(rng.uniform(0.0, 1.0, (9, 7)))
    sliced = slice(normalize(lift_gray(image, p)), image, p)
    assert np.abs(sliced.data - image.data).max() <= 1 / (2 * (bins - 1)) + 1e-12


def test_slice_of_all_ones_grid(rng):
    p = GridParams(sr_s=2, n_bins=8)
    reference = ImageGray(rng.uniform(0.0, 1.0, (10, 6)))
    grid = DenseGrid.full(np.ones(p.array_shape(6, 10)))
    np.testing.assert_allclose(slice(grid, reference, p).data, 1.0)


def test_slice_rejects_mismatched_reference():
    p = GridParams(sr_s=2, n_bins=8)
    grid = DenseGrid.full(np.ones(p.array_shape(8, 8)))
    with pytest.raises(DimensionMismatchError):
        slice(grid, ImageGray(np.zeros((12, 8))), p)


def test_dense_grid_values_must_be_unit_range():
    with pytest.raises(ImageValueError):
        DenseGrid.full(np.full((1, 1, 2), 1.5))


def test_zero_sigma_blur_is_identity(rng):
    grid = lift_gray(ImageGray(rng.uniform(0.0, 1.0, (8, 8))), GridParams(sr_s=2, n_bins=8))
    blurred = grid_blur(grid, 0.0, 0.0)
    np.testing.assert_array_equal(blurred.weight, grid.weight)
    np.testing.assert_array_equal(blurred.value_sum, grid.value_sum)


def test_blur_conserves_mass(rng):
    grid = lift_gray(ImageGray(rng.uniform(0.0, 1.0, (8, 8))), GridParams(sr_s=2, n_bins=8))
    blurred = grid_blur(grid, 1.5, 2.0)
    assert blurred.weight.sum() == pytest.approx(grid.weight.sum())
    assert blurred.value_sum.sum() == pytest.approx(grid.value_sum.sum())


def test_blur_of_single_voxel_is_gaussian_outer_product():
    weight = np.zeros((9, 9, 1))
    weight[4, 4, 0] = 1.0
    blurred = grid_blur(BilateralGrid(weight, weight), 1.0, 0.0)
    taps = np.exp(-0.5 * np.arange(-3, 4) ** 2)
    taps /= taps.sum()
    expected = np.zeros((9, 9))
    expected[1:8, 1:8] = np.outer(taps, taps)
    np.testing.assert_allclose(blurred.weight[:, :, 0], expected, atol=1e-15)


def test_negative_sigma_is_rejected():
    grid = BilateralGrid(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        grid_blur(grid, -1.0, 0.0)


def test_gaussian_kernel_is_normalized_and_cached():
    kernel = gaussian_kernel(2.0)
    assert kernel.sum() == pytest.approx(1.0)
    assert kernel.size == 13
    assert gaussian_kernel(2.0) is kernel
    np.testing.assert_array_equal(gaussian_kernel(0.0), [1.0])


def test_filter_constant_image():
    p = GridParams(sr_s=2, n_bins=16)
    image = ImageGray(np.full((12, 12), 0.5))
    np.testing.assert_allclose(bilateral_filter(image, p, 1.0, 1.0).data, 0.5, atol=1e-6)


def test_filter_preserves_step_edge():
    p = GridParams(sr_s=1, n_bins=16)
    data = np.full((16, 16), 0.2)
    data[:, 8:] = 0.8
    filtered = bilateral_filter(ImageGray(data), p, 1.0, 1.0).data
    assert np.abs(filtered[:, :8] - 0.2).max() < 0.02
    assert np.abs(filtered[:, 8:] - 0.8).max() < 0.02


def test_filter_with_zero_sigmas_is_within_slice_bound(rng):
    p = GridParams(sr_s=1, n_bins=8)
    image = ImageGray(rng.uniform(0.0, 1.0, (6, 6)))
    assert np.abs(bilateral_filter(image, p, 0.0, 0.0).data - image.data).max() <= 1 / 14 + 1e-12


def test_filter_smooths_noise_within_a_region(rng):
    p = GridParams(sr_s=1, n_bins=16)
    noisy = ImageGray(np.clip(0.5 + rng.normal(0.0, 0.02, (16, 16)), 0.0, 1.0))
    filtered = bilateral_filter(noisy, p, 2.0, 4.0)
    assert filtered.data.std() < noisy.data.std()


def test_grid_dump_round_trip(tmp_path, rng):
    grid = lift_gray(ImageGray(rng.uniform(0.0, 1.0, (6, 10))), GridParams(sr_s=2, n_bins=4))
    path = tmp_path / "grid.bgrd"
    write_grid(path, grid)
    loaded = read_grid(path)
    assert loaded.dims == (5, 3, 4)
    np.testing.assert_array_equal(loaded.weight, grid.weight)
    np.testing.assert_array_equal(loaded.value_sum, grid.value_sum)


def test_grid_dump_layout(tmp_path, rng):
    grid = lift_gray(ImageGray(rng.uniform(0.0, 1.0, (6, 10))), GridParams(sr_s=2, n_bins=4))
    path = tmp_path / "grid.bgrd"
    write_grid(path, grid)
    blob = path.read_bytes()
    assert struct.unpack("<4sH3I", blob[:18]) == (b"BGRD", 1, 5, 3, 4)
    values = np.frombuffer(blob[18:], dtype="<f8")
    assert values.size == 2 * 3 * 5 * 4
    np.testing.assert_array_equal(values[:60].reshape(3, 5, 4), grid.value_sum)
    np.testing.assert_array_equal(values[60:].reshape(3, 5, 4), grid.weight)


@pytest.mark.parametrize("blob", [b"", b"XXXX" + bytes(14), b"BGRD\x02\x00" + bytes(12)])
def test_grid_dump_rejects_bad_headers(tmp_path, blob):
    path = tmp_path / "bad.bgrd"
    path.write_bytes(blob)
    with pytest.raises(GridFormatError):
        read_grid(path)


def test_grid_dump_rejects_short_payload(tmp_path):
    grid = lift_gray(ImageGray(np.zeros((2, 2))), GridParams(sr_s=1, n_bins=2))
    path = tmp_path / "short.bgrd"
    write_grid(path, grid)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(GridFormatError):
        read_grid(path)


def test_grid_summary_render():
    grid = lift_gray(ImageGray(np.full((2, 2), 1.0)), GridParams(sr_s=1, n_bins=2))
    text = summarize(grid).render()
    assert text.splitlines() == [
        "dims=2x2x2",
        "occupancy=0.500000",
        "weight_total=4.000000",
        "value_total=4.000000",
    ]


@pytest.mark.parametrize("bins", [8, 16, 32, 64])
@pytest.mark.parametrize("sr_s", [1, 2, 4])
def test_lift_conserves_mass(sr_s, bins):
    # 12 combinations x 17 images covers at least 200 random images
    rng = np.random.default_rng(100 * sr_s + bins)
    for _ in range(17):
        height, width = rng.integers(1, 40, size=2)
        image = ImageGray(rng.uniform(0.0, 1.0, (height, width)))
        grid = lift_gray(image, GridParams(sr_s=sr_s, n_bins=bins))
        assert grid.weight.sum() == height * width
        assert grid.value_sum.sum() == pytest.approx(image.data.sum(), rel=1e-9, abs=1e-12)
        assert (grid.weight >= 0).all()
        assert (grid.value_sum[grid.weight == 0] == 0).all()


@pytest.mark.parametrize("bins", [4, 8, 32])
@pytest.mark.parametrize("seed", range(3))
def test_pixels_sharing_a_voxel_lie_within_one_bin_width(seed, bins):
    rng = np.random.default_rng(seed)
    p = GridParams(sr_s=3, n_bins=bins)
    image = ImageGray(rng.uniform(0.0, 1.0, (20, 17)))
    flat, shape = splat_indices(image, p)
    size = int(np.prod(shape))
    low = np.full(size, np.inf)
    high = np.full(size, -np.inf)
    np.minimum.at(low, flat, image.data.ravel())
    np.maximum.at(high, flat, image.data.ravel())
    occupied = np.isfinite(low)
    # closest-integer binning keeps contributors within half a bin of the bin centre
    assert (high[occupied] - low[occupied]).max() <= 1 / (bins - 1) + 1e-12


@pytest.mark.parametrize("bins", [8, 16])
def test_far_apart_intensities_never_share_a_bin(bins):
    step = 2 / (bins - 1)
    for low in np.linspace(0.0, 1.0 - step - 2e-6, 25):
        image = ImageGray(np.array([[low, low + step + 1e-6]]))
        grid = lift_gray(image, GridParams(sr_s=4, n_bins=bins))
        assert grid.shape == (1, 1, bins)
        assert (grid.weight <= 1).all()


@pytest.mark.parametrize("seed", range(5))
def test_permuting_pixels_within_one_cell_leaves_the_grid_unchanged(seed):
    rng = np.random.default_rng(seed)
    p = GridParams(sr_s=8, n_bins=16)
    data = rng.uniform(0.0, 1.0, (8, 8))
    shuffled = rng.permutation(data.ravel()).reshape(data.shape)
    original = lift_gray(ImageGray(data), p)
    permuted = lift_gray(ImageGray(shuffled), p)
    assert original.shape == (1, 1, 16)
    np.testing.assert_array_equal(permuted.weight, original.weight)
    np.testing.assert_allclose(permuted.value_sum, original.value_sum, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("shift", [(3, -2, 2), (-4, 1, 0), (0, 0, -3)])
def test_blur_commutes_with_translation(shift):
    rng = np.random.default_rng(7)
    weight = np.zeros((24, 24, 24))
    weight[9:15, 9:15, 9:15] = rng.integers(1, 5, size=(6, 6, 6))
    value_sum = weight * rng.uniform(0.0, 1.0, weight.shape)

    def translated(array):
        return np.roll(array, shift, axis=(0, 1, 2))

    blurred_then_moved = grid_blur(BilateralGrid(value_sum, weight), 1.0, 1.0)
    moved_then_blurred = grid_blur(BilateralGrid(translated(value_sum), translated(weight)), 1.0, 1.0)
    np.testing.assert_allclose(moved_then_blurred.weight, translated(blurred_then_moved.weight), atol=1e-12)
    np.testing.assert_allclose(moved_then_blurred.value_sum, translated(blurred_then_moved.value_sum), atol=1e-12)
