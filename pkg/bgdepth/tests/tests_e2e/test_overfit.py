import numpy as np
import pytest

from bgdepth.models.fusion import AblationMode
from bgdepth.pipeline.config import TrainConfig
from bgdepth.pipeline.evaluate import Predictor
from bgdepth.pipeline.synth import synth_dataset
from bgdepth.pipeline.train import FINAL_CHECKPOINT, train

OVERFIT_MSE = 1e-3
SYNTH = {"count": 4, "test_count": 0, "width": 64, "height": 64, "n_objects": 3}


def final_masked_mse(result, samples):
    """Masked MSE of normalized depth, predicted by the trained model in inference mode."""
    predictor = Predictor.from_checkpoint(result.checkpoint)
    depth_norm = predictor.task.cfg.depth_norm
    residuals = []
    for sample in samples:
        mask = sample.depth.mask
        predicted = predictor.predict(sample).data / depth_norm
        residuals.append(predicted[mask] - sample.depth.normalized(depth_norm)[mask])
    return float(np.mean(np.square(np.concatenate(residuals))))


@pytest.fixture(scope="module")
def overfit_samples():
    return synth_dataset(TrainConfig(synth=SYNTH).synth, "train")


@pytest.fixture(scope="module")
def geometry_run(tmp_path_factory, overfit_samples):
    cfg = TrainConfig(
        model={"kind": "bgunet"},
        optimizer={"lr": 3e-3},
        epochs=500,
        max_steps=500,
        batch_size=4,
        synth=SYNTH,
    )
    out = tmp_path_factory.mktemp("geometry")
    return train(cfg, overfit_samples, output_dir=out), out / FINAL_CHECKPOINT


@pytest.mark.slow
def test_grid_unet_overfits_four_scenes(geometry_run, overfit_samples):
    result, _ = geometry_run
    assert len(result.losses) == 500
    assert np.mean(result.losses[-20:]) < np.mean(result.losses[:20])
    assert final_masked_mse(result, overfit_samples) < OVERFIT_MSE


@pytest.mark.slow
def test_fusion_overfits_four_scenes(geometry_run, overfit_samples):
    _, geometry_checkpoint = geometry_run
    cfg = TrainConfig(
        model={
            "kind": "fusion",
            "mode": AblationMode.full.value,
            "geometry_checkpoint": str(geometry_checkpoint),
        },
        optimizer={"lr": 3e-3},
        epochs=1000,
        max_steps=1000,
        batch_size=4,
        synth=SYNTH,
    )
    result = train(cfg, overfit_samples)
    assert len(result.losses) == 1000
    assert final_masked_mse(result, overfit_samples) < OVERFIT_MSE
