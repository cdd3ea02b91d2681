"""Train and score the fusion network once per input variant on one shared dataset."""
import argparse
from pathlib import Path
from typing import Dict, Sequence

import structlog

from bgdepth.config_utils import get_config
from bgdepth.logging_utils import setup_logging
from bgdepth.metrics.report import MetricReport, render_tsv
from bgdepth.models.bgunet import BGUNetConfig
from bgdepth.models.fusion import ABLATION_MODES, FusionConfig
from bgdepth.pipeline.config import TrainConfig
from bgdepth.pipeline.dataset import Sample
from bgdepth.pipeline.evaluate import Predictor, evaluate, write_report
from bgdepth.pipeline.synth import synth_dataset
from bgdepth.pipeline.train import FINAL_CHECKPOINT, train

logger = structlog.get_logger(__name__)

ABLATION_REPORT = "ablation.tsv"


def fusion_template(cfg: TrainConfig) -> FusionConfig:
    """The fusion architecture shared by all variants."""
    if isinstance(cfg.model, FusionConfig):
        return cfg.model
    geometry: BGUNetConfig = cfg.model
    return FusionConfig(
        image_width=geometry.image_width,
        image_height=geometry.image_height,
        geometry_model=geometry,
        seed=geometry.seed,
    )


def run_ablation(
    cfg: TrainConfig,
    train_samples: Sequence[Sample],
    test_samples: Sequence[Sample],
    output_dir,
    workers: int = 1,
) -> Dict[str, MetricReport]:
    """Mean test report per variant, keyed by display name, in registry order.

    The geometry network is trained first and frozen; every variant then trains
    with the same seed and step budget.
    """
    output_dir = Path(output_dir)
    template = fusion_template(cfg)
    geometry_dir = output_dir / "geometry"
    logger.info("Training geometry network", steps=cfg.max_steps)
    train(cfg.model_copy(update={"model": template.geometry_model}), train_samples, output_dir=geometry_dir)

    reports = {}
    for mode in ABLATION_MODES:
        structlog.contextvars.bind_contextvars(mode=mode.name)
        try:
            model = FusionConfig(
                **{
                    **template.model_dump(),
                    "mode": mode.name,
                    "geometry_source": "checkpoint",
                    "geometry_checkpoint": str(geometry_dir / FINAL_CHECKPOINT),
                }
            )
            mode_cfg = cfg.model_copy(update={"model": model})
            result = train(mode_cfg, train_samples, output_dir=output_dir / mode.name)
            evaluation = evaluate(Predictor.from_checkpoint(result.checkpoint), test_samples, workers=workers)
            reports[mode.display_name] = evaluation.mean.model_copy(update={"sample_id": mode.display_name})
            logger.info("Variant finished", rmse=evaluation.mean.rmse, derm=evaluation.mean.derm)
        finally:
            structlog.contextvars.unbind_contextvars("mode")
    write_report(output_dir / ABLATION_REPORT, render_tsv(reports.values(), label="mode"))
    return reports


def main(argv=None):
    parser = argparse.ArgumentParser(description="Run the fusion input ablation on synthetic scenes")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--out", help="output directory")
    args = parser.parse_args(argv)
    config = get_config(args.config, {"output_dir": args.out})
    setup_logging(config.log_level)
    cfg = config.train_config()
    reports = run_ablation(
        cfg, synth_dataset(cfg.synth, "train"), synth_dataset(cfg.synth, "test"), config.output_dir, config.workers
    )
    print(render_tsv(reports.values(), label="mode"), end="")


if __name__ == "__main__":
    main()
