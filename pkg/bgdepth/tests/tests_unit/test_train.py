import numpy as np
import pytest

from bgdepth.autodiff.tensor import Param, Tensor
from bgdepth.exceptions import ConfigError, DatasetError, IncompatibleCheckpointError, NonFiniteLossError
from bgdepth.models.base import Module
from bgdepth.pipeline.checkpoint import read_checkpoint
from bgdepth.pipeline.config import AdamConfig, TrainConfig
from bgdepth.pipeline.optim import Adam, round_to_float32
from bgdepth.pipeline.tasks import FusionTask, Task
from bgdepth.pipeline.train import FINAL_CHECKPOINT, Trainer, train
from bgdepth.tests.common.constants import TINY_BGUNET, TINY_FUSION


class NaNTask(Task):
    kind = "nan"

    def __init__(self, cfg):
        super().__init__(cfg)
        self.model = Module()
        self.model.add_param("w", np.ones(2))

    def modules(self):
        return {"model": self.model}

    def prepare(self, samples):
        return list(samples)

    def loss(self, examples):
        return Tensor(np.nan)


def test_adam_first_step_moves_by_the_learning_rate():
    param = Param(np.array([1.0, -2.0]), name="w")
    param.grad = np.array([0.5, -3.0])
    Adam([param], AdamConfig(lr=1e-2)).step()
    np.testing.assert_allclose(param.data, [0.99, -1.99], rtol=1e-6)
    assert param.data.dtype == np.float64
    np.testing.assert_array_equal(param.data, param.data.astype(np.float32))


def test_zero_learning_rate_freezes_parameters(tiny_train_config, tiny_samples):
    cfg = tiny_train_config.model_copy(update={"optimizer": AdamConfig(lr=0.0)})
    trainer = Trainer(cfg, tiny_samples)
    before = {p.name: p.data.copy() for p in trainer.params}
    trainer.run()
    for param in trainer.params:
        np.testing.assert_array_equal(param.data, before[param.name])


def test_round_to_float32():
    param = Param(np.array([0.1]), name="w")
    round_to_float32([param])
    assert param.data[0] == float(np.float32(0.1))


def test_optimizer_state_must_match():
    adam = Adam([Param(np.zeros(3), name="w")], AdamConfig())
    with pytest.raises(IncompatibleCheckpointError):
        adam.load_state_dict({"m.w": np.zeros(3)}, 1)


def test_training_is_deterministic(tiny_train_config, tiny_samples):
    first = train(tiny_train_config, tiny_samples)
    second = train(tiny_train_config, tiny_samples)
    assert len(first.losses) == 4
    assert first.losses == second.losses
    for name, array in first.checkpoint.tensors.items():
        np.testing.assert_array_equal(second.checkpoint.tensors[name], array)
    assert [entry.epoch for entry in first.history] == [0, 1]
    assert first.checkpoint.state["step"] == 4


def test_resumed_training_matches_an_uninterrupted_run(tmp_path, tiny_train_config, tiny_samples):
    full_cfg = tiny_train_config.model_copy(update={"max_steps": 5})
    uninterrupted = train(full_cfg, tiny_samples)

    # stops in the middle of the second epoch
    train(tiny_train_config.model_copy(update={"max_steps": 3}), tiny_samples, output_dir=tmp_path)
    partial = read_checkpoint(tmp_path / FINAL_CHECKPOINT)
    assert (partial.state["epoch"], partial.state["batch_index"]) == (1, 1)
    resumed = train(full_cfg, tiny_samples, resume_from=partial)

    assert resumed.losses == uninterrupted.losses
    assert list(resumed.checkpoint.tensors) == list(uninterrupted.checkpoint.tensors)
    for name, array in uninterrupted.checkpoint.tensors.items():
        np.testing.assert_array_equal(resumed.checkpoint.tensors[name], array)


def test_resume_rejects_another_architecture(tiny_train_config, tiny_samples):
    ckpt = train(tiny_train_config, tiny_samples).checkpoint
    other = tiny_train_config.model_copy(update={"model": TrainConfig(model={**TINY_BGUNET, "base_channels": 3}).model})
    with pytest.raises(IncompatibleCheckpointError):
        train(other, tiny_samples, resume_from=ckpt)


def test_periodic_checkpoints(tmp_path, tiny_train_config, tiny_samples):
    cfg = tiny_train_config.model_copy(update={"checkpoint_every": 1})
    train(cfg, tiny_samples, output_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["checkpoint.bgdc", "checkpoint_epoch_0001.bgdc", "checkpoint_epoch_0002.bgdc"]


def test_non_finite_loss_stops_training(tiny_train_config, tiny_samples):
    trainer = Trainer(tiny_train_config, tiny_samples, task=NaNTask(tiny_train_config))
    with pytest.raises(NonFiniteLossError) as info:
        trainer.run()
    assert info.value.step == 0
    assert info.value.exit_code == 3


def test_empty_dataset(tiny_train_config):
    with pytest.raises(DatasetError):
        Trainer(tiny_train_config, [])


@pytest.fixture
def geometry_checkpoint(tmp_path, tiny_train_config, tiny_samples):
    train(tiny_train_config, tiny_samples, output_dir=tmp_path / "geometry")
    return tmp_path / "geometry" / FINAL_CHECKPOINT


def fusion_config(tiny_train_config, **model):
    return tiny_train_config.model_copy(update={"model": TrainConfig(model={**TINY_FUSION, **model}).model})


def test_fusion_checkpoint_embeds_the_frozen_geometry_network(tiny_train_config, tiny_samples, geometry_checkpoint):
    cfg = fusion_config(tiny_train_config, geometry_checkpoint=str(geometry_checkpoint))
    result = train(cfg, tiny_samples)
    geometry = read_checkpoint(geometry_checkpoint).tensors
    for name, array in geometry.items():
        if name.startswith("model."):
            embedded = "geometry." + name[len("model."):]
            np.testing.assert_array_equal(result.checkpoint.tensors[embedded], array)
    assert all(np.isfinite(result.losses))


def test_joint_training_updates_the_geometry_network(tiny_train_config, tiny_samples):
    cfg = fusion_config(tiny_train_config, geometry_source="joint")
    task = FusionTask(cfg)
    before = task.geometry.param("head.weight").data.copy()
    Trainer(cfg, tiny_samples, task=task).run()
    assert not np.array_equal(task.geometry.param("head.weight").data, before)


@pytest.mark.parametrize("mode", ["rgb_seg", "rgb_edge", "rgb_seg_edge"])
def test_variants_without_geometry_train_alone(tiny_train_config, tiny_samples, mode):
    result = train(fusion_config(tiny_train_config, mode=mode), tiny_samples)
    assert not any(name.startswith("geometry.") for name in result.checkpoint.tensors)
    assert len(result.losses) == 4


def test_checkpoint_geometry_source_needs_a_path(tiny_train_config, tiny_samples):
    with pytest.raises(ConfigError):
        train(fusion_config(tiny_train_config), tiny_samples)


def test_precomputed_geometry_must_be_on_disk(tiny_train_config, tiny_samples):
    with pytest.raises(DatasetError):
        train(fusion_config(tiny_train_config, geometry_source="precomputed"), tiny_samples)


@pytest.mark.parametrize("source", ["checkpoint", "joint"])
def test_resumed_fusion_training_matches_an_uninterrupted_run(
    tmp_path, tiny_train_config, tiny_samples, geometry_checkpoint, source
):
    model = {"geometry_source": source}
    if source == "checkpoint":
        model["geometry_checkpoint"] = str(geometry_checkpoint)
    full_cfg = fusion_config(tiny_train_config, **model).model_copy(update={"max_steps": 5})
    uninterrupted = train(full_cfg, tiny_samples)

    train(full_cfg.model_copy(update={"max_steps": 3}), tiny_samples, output_dir=tmp_path / "partial")
    partial = read_checkpoint(tmp_path / "partial" / FINAL_CHECKPOINT)
    resumed = train(full_cfg, tiny_samples, resume_from=partial)

    assert resumed.losses == uninterrupted.losses
    for name, array in uninterrupted.checkpoint.tensors.items():
        np.testing.assert_array_equal(resumed.checkpoint.tensors[name], array)
