"""Training loop with exact, resumable state."""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import structlog

from bgdepth.autodiff.tensor import Tape
from bgdepth.exceptions import DatasetError, IncompatibleCheckpointError, NonFiniteLossError
from bgdepth.pipeline.checkpoint import Checkpoint, write_checkpoint
from bgdepth.pipeline.config import TrainConfig
from bgdepth.pipeline.dataset import Sample
from bgdepth.pipeline.optim import Adam, round_to_float32
from bgdepth.pipeline.rng import make_rng, restore_rng, rng_state
from bgdepth.pipeline.tasks import Task, load_module_tensors, make_task, module_tensors

logger = structlog.get_logger(__name__)

FINAL_CHECKPOINT = "checkpoint.bgdc"


def config_echo(cfg: TrainConfig) -> dict:
    return {"train": cfg.model_dump(mode="json")}


@dataclass
class EpochLog:
    epoch: int
    steps: int
    mean_loss: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[EpochLog] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)


class Trainer:
    """Adam over shuffled mini-batches.

    The shuffle stream is captured at the start of every epoch together with the
    position inside it, so a checkpoint taken anywhere resumes onto the same batches.
    """

    def __init__(self, cfg: TrainConfig, samples: Sequence[Sample], task: Optional[Task] = None, output_dir=None):
        if not samples:
            raise DatasetError("Cannot train on an empty dataset")
        self.task = task or make_task(cfg)
        self.cfg = self.task.cfg
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.examples = self.task.prepare(samples)
        self.params = self.task.trainable()
        round_to_float32(self.params)
        self.optimizer = Adam(self.params, self.cfg.optimizer)
        self.rng = make_rng(self.cfg.seed, "train.shuffle")
        self.epoch_rng_state = rng_state(self.rng)
        self.step = 0
        self.epoch = 0
        self.batch_index = 0
        self.history: List[EpochLog] = []
        self.losses: List[float] = []

    def checkpoint(self) -> Checkpoint:
        tensors = module_tensors(self.task.modules())
        tensors.update({f"optimizer.{k}": v for k, v in self.optimizer.state_dict().items()})
        state = {
            "step": self.step,
            "epoch": self.epoch,
            "batch_index": self.batch_index,
            "optimizer_step": self.optimizer.step_count,
            "rng": self.epoch_rng_state,
            "losses": self.losses,
        }
        return Checkpoint(config=config_echo(self.cfg), tensors=tensors, state=state)

    def resume(self, ckpt: Checkpoint):
        if ckpt.config.get("train", {}).get("model") != self.cfg.model.model_dump(mode="json"):
            raise IncompatibleCheckpointError("Checkpoint was written for a different model configuration")
        load_module_tensors(self.task.modules(), ckpt.tensors)
        head = "optimizer."
        self.optimizer.load_state_dict(
            {k[len(head):]: v for k, v in ckpt.tensors.items() if k.startswith(head)},
            ckpt.state["optimizer_step"],
        )
        self.step = ckpt.state["step"]
        self.epoch = ckpt.state["epoch"]
        self.batch_index = ckpt.state["batch_index"]
        self.epoch_rng_state = ckpt.state["rng"]
        self.rng = restore_rng(self.epoch_rng_state)
        self.losses = list(ckpt.state.get("losses", []))
        logger.info("Resumed training", step=self.step, epoch=self.epoch)

    def _reached_max_steps(self) -> bool:
        return self.cfg.max_steps is not None and self.step >= self.cfg.max_steps

    def train_step(self, batch) -> float:
        structlog.contextvars.bind_contextvars(step=self.step)
        with Tape() as tape:
            loss = self.task.loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(self.step, value)
        tape.backward(loss)
        self.optimizer.step()
        self.optimizer.zero_grad()
        self.step += 1
        self.losses.append(value)
        return value

    def train_epoch(self) -> Optional[EpochLog]:
        if self.batch_index == 0:
            self.epoch_rng_state = rng_state(self.rng)
        order = self.rng.permutation(len(self.examples))
        batch_size = self.cfg.batch_size
        batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        epoch_losses = []
        while self.batch_index < len(batches):
            if self._reached_max_steps():
                return None
            batch = [self.examples[i] for i in batches[self.batch_index]]
            epoch_losses.append(self.train_step(batch))
            self.batch_index += 1
        entry = EpochLog(self.epoch, len(epoch_losses), float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        self.epoch += 1
        self.batch_index = 0
        self.epoch_rng_state = rng_state(self.rng)
        self.history.append(entry)
        logger.info("Epoch finished", epoch=entry.epoch, steps=self.step, loss=entry.mean_loss)
        return entry

    def run(self) -> TrainResult:
        self.task.train(True)
        try:
            while self.epoch < self.cfg.epochs and not self._reached_max_steps():
                entry = self.train_epoch()
                if entry is None:
                    break
                every = self.cfg.checkpoint_every
                if every and self.output_dir is not None and self.epoch % every == 0:
                    write_checkpoint(self.output_dir / f"checkpoint_epoch_{self.epoch:04d}.bgdc", self.checkpoint())
        finally:
            structlog.contextvars.unbind_contextvars("step")
        ckpt = self.checkpoint()
        if self.output_dir is not None:
            write_checkpoint(self.output_dir / FINAL_CHECKPOINT, ckpt)
        logger.info("Training finished", steps=self.step, epochs=self.epoch)
        return TrainResult(checkpoint=ckpt, history=self.history, losses=list(self.losses))


def train(cfg: TrainConfig, samples: Sequence[Sample], output_dir=None, resume_from: Optional[Checkpoint] = None) -> TrainResult:
    trainer = Trainer(cfg, samples, task=make_task(cfg, resume_from), output_dir=output_dir)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.run()
