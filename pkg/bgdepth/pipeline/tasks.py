"""What the trainer trains: a model family, how it prepares samples and scores them."""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog

from bgdepth.autodiff import ops
from bgdepth.autodiff.tensor import Param, Tensor
from bgdepth.exceptions import ConfigError, DatasetError, IncompatibleCheckpointError
from bgdepth.imaging import DepthMap
from bgdepth.models import bgunet, fusion
from bgdepth.models.base import Module
from bgdepth.pipeline.checkpoint import Checkpoint, read_checkpoint
from bgdepth.pipeline.config import TrainConfig
from bgdepth.pipeline.dataset import Sample

logger = structlog.get_logger(__name__)


def module_tensors(modules: Dict[str, Module]) -> Dict[str, np.ndarray]:
    """Checkpoint records for ``modules``: parameters as float32, buffers as float64."""
    tensors = {}
    for prefix, module in modules.items():
        for name, param in module.named_params():
            tensors[f"{prefix}.{name}"] = param.data.astype(np.float32)
        for name, buffer in module.named_buffers():
            tensors[f"{prefix}.{name}"] = buffer.astype(np.float64)
    return tensors


def load_module_tensors(modules: Dict[str, Module], tensors: Dict[str, np.ndarray]):
    for prefix, module in modules.items():
        head = f"{prefix}."
        state = {name[len(head):]: array for name, array in tensors.items() if name.startswith(head)}
        module.load_state_dict(state)


class Task:
    kind = ""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg

    def modules(self) -> Dict[str, Module]:
        raise NotImplementedError

    def trainable(self) -> List[Param]:
        return [p for module in self.modules().values() for p in module.params()]

    def train(self, mode: bool = True):
        for module in self.modules().values():
            module.train(mode)

    def prepare(self, samples: Sequence[Sample]) -> list:
        raise NotImplementedError

    def loss(self, examples: Sequence) -> Tensor:
        raise NotImplementedError

    def predict(self, sample: Sample) -> DepthMap:
        raise NotImplementedError

    @property
    def image_size(self):
        return (self.cfg.model.image_height, self.cfg.model.image_width)


class BGUNetTask(Task):
    kind = "bgunet"

    def __init__(self, cfg: TrainConfig):
        super().__init__(cfg)
        self.model = bgunet.build(cfg.model)

    def modules(self):
        return {"model": self.model}

    def prepare(self, samples):
        return [bgunet.prepare_example(self.cfg.model, s.rgb, s.depth, self.cfg.depth_norm) for s in samples]

    def loss(self, examples):
        return bgunet.batch_loss(self.model, examples)

    def predict(self, sample):
        return bgunet.predict_depth(self.model, sample.rgb, self.cfg.depth_norm)


@dataclass(frozen=True)
class FusionExample:
    maps: fusion.FusionInput
    target: DepthMap
    geometry_example: Optional[bgunet.BGUNetExample] = None


def load_geometry_model(path) -> bgunet.BGUNet:
    ckpt = read_checkpoint(path)
    model_cfg = ckpt.config.get("train", {}).get("model", {})
    if model_cfg.get("kind") != "bgunet":
        raise IncompatibleCheckpointError(f"{path} does not hold a geometry network")
    model = bgunet.build(bgunet.BGUNetConfig(**model_cfg))
    load_module_tensors({"model": model}, ckpt.tensors)
    return model.eval()


class FusionTask(Task):
    """Fusion network, with its geometry network frozen, trained jointly, or read from disk."""
    kind = "fusion"

    def __init__(self, cfg: TrainConfig, geometry: Optional[bgunet.BGUNet] = None):
        model_cfg = cfg.model
        self.mode = fusion.mode_conf(model_cfg.mode)
        if geometry is None and self.mode.uses_geometry and model_cfg.geometry_source != "precomputed":
            if model_cfg.geometry_checkpoint is not None:
                geometry = load_geometry_model(model_cfg.geometry_checkpoint)
            elif model_cfg.geometry_source == "checkpoint":
                raise ConfigError("geometry_source=checkpoint needs train.model.geometry_checkpoint")
            else:
                geometry = bgunet.build(model_cfg.geometry_model)
        if geometry is not None:
            model_cfg = model_cfg.model_copy(update={"geometry_model": geometry.cfg})
            if (geometry.cfg.image_width, geometry.cfg.image_height) != (model_cfg.image_width, model_cfg.image_height):
                raise ConfigError("Geometry and fusion networks must share the image size")
            cfg = cfg.model_copy(update={"model": model_cfg})
        super().__init__(cfg)
        self.geometry = geometry
        self.joint = geometry is not None and model_cfg.geometry_source == "joint"
        self.net = fusion.build(model_cfg)

    def modules(self):
        modules = {"model": self.net}
        if self.geometry is not None:
            modules["geometry"] = self.geometry
        return modules

    def trainable(self):
        params = self.net.params()
        if self.joint:
            params += self.geometry.params()
        return params

    def train(self, mode: bool = True):
        self.net.train(mode)
        if self.geometry is not None:
            self.geometry.train(mode and self.joint)

    def _maps(self, sample: Sample, geometry=None) -> fusion.FusionInput:
        model_cfg = self.cfg.model
        seg, edge = fusion.auxiliary_maps(
            sample.rgb, sample.seg, sample.edge, model_cfg.segmentation_classes, model_cfg.seed
        )
        if self.mode.uses_geometry and geometry is None:
            if model_cfg.geometry_source == "precomputed":
                if sample.geometry is None:
                    raise DatasetError(f"Sample {sample.id!r} has no precomputed geometry map")
                geometry = sample.geometry
            elif not self.joint:
                geometry = bgunet.predict_geometry(self.geometry, sample.rgb)
        return fusion.FusionInput(geometry=geometry, segmentation=seg, edge=edge, rgb=sample.rgb)

    def prepare(self, samples):
        examples = []
        for sample in samples:
            geometry_example = None
            if self.joint:
                geometry_example = bgunet.prepare_example(
                    self.geometry.cfg, sample.rgb, sample.depth, self.cfg.depth_norm
                )
            examples.append(FusionExample(self._maps(sample), sample.depth, geometry_example))
        return examples

    def loss(self, examples):
        maps = [e.maps for e in examples]
        if self.joint:
            height, width = self.image_size
            geometry = bgunet.sliced_geometry(self.geometry, [e.geometry_example for e in examples])
            geometry = ops.reshape(geometry, (len(examples), 1, height, width))
            x = fusion.assemble_with_geometry(geometry, maps, self.mode.name)
        else:
            x = Tensor(np.concatenate([fusion.assemble(m, self.mode.name).data for m in maps]))
        return fusion.batch_loss(self.net, x, [e.target for e in examples], self.cfg.depth_norm)

    def predict(self, sample):
        geometry = None
        if self.joint:
            geometry = bgunet.predict_geometry(self.geometry, sample.rgb)
        x = fusion.assemble(self._maps(sample, geometry), self.mode.name)
        return fusion.predict_depth(self.net, x, self.cfg.depth_norm)


def make_task(cfg: TrainConfig, ckpt: Optional[Checkpoint] = None) -> Task:
    """Task for ``cfg``; with ``ckpt`` the geometry network is rebuilt from the checkpoint."""
    if cfg.model.kind == "bgunet":
        return BGUNetTask(cfg)
    geometry = None
    if ckpt is not None and any(name.startswith("geometry.") for name in ckpt.tensors):
        echo = ckpt.config.get("train", {}).get("model", {}).get("geometry_model")
        if echo is None:
            raise IncompatibleCheckpointError("Checkpoint holds geometry weights without their configuration")
        geometry = bgunet.build(bgunet.BGUNetConfig(**echo))
        # cached geometry maps are computed in prepare(), before any resume
        load_module_tensors({"geometry": geometry}, ckpt.tensors)
    task = FusionTask(cfg, geometry=geometry)
    logger.debug("Built fusion task", mode=task.mode.name, joint=task.joint)
    return task
