import numpy as np
import pytest

from bgdepth.autodiff import BatchNormState, Tensor, batchnorm2d, batchnorm3d
from bgdepth.exceptions import DegenerateBatchError, ShapeError


def test_training_mode_normalizes_each_channel(rng):
    x = Tensor(rng.normal(3.0, 2.0, (4, 2, 3, 3)))
    out = batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState(2), training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_eval_mode_with_fresh_statistics_is_identity(rng):
    x = Tensor(rng.standard_normal((1, 2, 2, 2, 2)))
    out = batchnorm3d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState(2, eps=0.0), training=False)
    np.testing.assert_allclose(out.data, x.data)


def test_running_statistics_update_in_place(rng):
    state = BatchNormState(1)
    running_mean = state.running_mean
    data = rng.normal(5.0, 1.0, (2, 1, 4, 4))
    batchnorm2d(Tensor(data), Tensor(np.ones(1)), Tensor(np.zeros(1)), state, training=True)
    assert state.running_mean is running_mean
    assert running_mean[0] == pytest.approx(0.1 * data.mean())
    assert state.running_var[0] == pytest.approx(0.9 + 0.1 * data.var(ddof=1))


def test_single_value_per_channel_cannot_train():
    with pytest.raises(DegenerateBatchError):
        batchnorm2d(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState(2))


def test_rank_and_parameter_shapes_are_checked():
    state = BatchNormState(2)
    with pytest.raises(ShapeError):
        batchnorm3d(Tensor(np.ones((2, 2, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), state)
    with pytest.raises(ShapeError):
        batchnorm2d(Tensor(np.ones((2, 2, 2, 2))), Tensor(np.ones(3)), Tensor(np.zeros(3)), state)
