from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import structlog

from bgdepth.exceptions import IncompatibleCheckpointError, UnwritablePathError
from bgdepth.imaging import DepthMap
from bgdepth.metrics.report import MetricReport, compute_report, render_tsv
from bgdepth.pipeline.checkpoint import Checkpoint, read_checkpoint
from bgdepth.pipeline.config import TrainConfig
from bgdepth.pipeline.dataset import Sample
from bgdepth.pipeline.tasks import Task, load_module_tensors, make_task

logger = structlog.get_logger(__name__)


class Predictor:
    """A trained model in inference mode."""

    def __init__(self, task: Task):
        self.task = task
        self.task.train(False)

    @classmethod
    def from_checkpoint(cls, source) -> "Predictor":
        ckpt = source if isinstance(source, Checkpoint) else read_checkpoint(source)
        try:
            cfg = TrainConfig(**ckpt.config["train"])
        except (KeyError, TypeError, ValueError) as e:
            raise IncompatibleCheckpointError(f"Checkpoint carries no usable configuration: {e}") from e
        task = make_task(cfg, ckpt)
        load_module_tensors(task.modules(), ckpt.tensors)
        return cls(task)

    @property
    def image_size(self):
        return self.task.image_size

    def predict(self, sample: Sample) -> DepthMap:
        if sample.shape != self.image_size:
            raise IncompatibleCheckpointError(
                f"Sample {sample.id!r} is {sample.shape}, the model expects {self.image_size}"
            )
        return self.task.predict(sample)


class GroundTruthPredictor:
    """Predicts the ground truth itself; the reference point of every metric."""

    def predict(self, sample: Sample) -> DepthMap:
        return sample.depth


@dataclass
class Evaluation:
    mean: MetricReport
    reports: List[MetricReport]

    def to_tsv(self, label: str = "id") -> str:
        return render_tsv(self.reports + [self.mean], label=label)


def evaluate(predictor, samples: Sequence[Sample], workers: int = 1) -> Evaluation:
    """Per-sample reports in dataset order plus their mean."""
    def score(sample):
        return compute_report(sample.depth, predictor.predict(sample), sample_id=sample.id)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports = list(pool.map(score, samples))
    mean = MetricReport.mean(reports)
    logger.info("Evaluated", samples=len(reports), rmse=mean.rmse, derm=mean.derm)
    return Evaluation(mean=mean, reports=reports)


def write_report(path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise UnwritablePathError(f"Cannot write report {path}: {e}") from e
