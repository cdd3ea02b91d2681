from typing import Dict, List

import numpy as np

from bgdepth.autodiff.tensor import Param
from bgdepth.exceptions import IncompatibleCheckpointError
from bgdepth.pipeline.config import AdamConfig


def round_to_float32(params: List[Param]):
    """Keep parameter values representable in the float32 checkpoint payload."""
    for param in params:
        param.data[...] = param.data.astype(np.float32)


class Adam:
    def __init__(self, params: List[Param], cfg: AdamConfig):
        self.params = list(params)
        self.cfg = cfg
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self):
        self.step_count += 1
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        correction1 = 1.0 - b1 ** self.step_count
        correction2 = 1.0 - b2 ** self.step_count
        for param in self.params:
            grad = param.grad
            m = self.m[param.name]
            v = self.v[param.name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            param.data -= self.cfg.lr * (m / correction1) / (np.sqrt(v / correction2) + self.cfg.eps)
        round_to_float32(self.params)

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for name in self.m:
            state[f"m.{name}"] = self.m[name]
            state[f"v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], step_count: int):
        for name in self.m:
            for kind, target in (("m", self.m[name]), ("v", self.v[name])):
                key = f"{kind}.{name}"
                if key not in state or state[key].shape != target.shape:
                    raise IncompatibleCheckpointError(f"Optimizer state {key} is missing or misshapen")
                target[...] = state[key]
        self.step_count = step_count
