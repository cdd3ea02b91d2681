"""Parameter containers shared by both networks."""
from collections import OrderedDict
from contextlib import contextmanager
from typing import Dict, Iterator, List, Tuple

import numpy as np

from bgdepth.autodiff.tensor import Param
from bgdepth.exceptions import IncompatibleCheckpointError


class Module:
    """A node in a model tree.

    Parameters and buffers are registered under dotted name paths
    (``encoders.0.block1.conv.weight``); the order of registration is the order of
    ``named_params()`` and of the serialized state.
    """

    def __init__(self):
        self._params: "OrderedDict[str, Param]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()
        self.training = True

    def add_param(self, name: str, data) -> Param:
        param = Param(data, name=name)
        self._params[name] = param
        return param

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        self._buffers[name] = array
        return array

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[str(name)] = module
        for path, param in module.named_params():
            param.name = f"{name}.{path}"
        return module

    def named_params(self, prefix: str = "") -> Iterator[Tuple[str, Param]]:
        for name, param in self._params.items():
            yield prefix + name, param
        for child_name, child in self._children.items():
            yield from child.named_params(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, array in self._buffers.items():
            yield prefix + name, array
        for child_name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def params(self) -> List[Param]:
        return [param for _, param in self.named_params()]

    def param(self, name: str) -> Param:
        for path, param in self.named_params():
            if path == name:
                return param
        raise KeyError(name)

    def parameter_count(self) -> int:
        return sum(param.data.size for param in self.params())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    @contextmanager
    def inference(self):
        """Run the body with running statistics, then restore the previous mode."""
        previous = self.training
        self.eval()
        try:
            yield self
        finally:
            self.train(previous)

    def zero_grad(self):
        for param in self.params():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = OrderedDict((name, param.data) for name, param in self.named_params())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """Copy ``state`` into this model; names and shapes must match exactly."""
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise IncompatibleCheckpointError(
                f"State does not match the model: missing {missing[:5]}, unexpected {unexpected[:5]}"
            )
        for name, target in own.items():
            source = np.asarray(state[name], dtype=np.float64)
            if source.shape != target.shape:
                raise IncompatibleCheckpointError(
                    f"Shape mismatch for {name}: checkpoint {source.shape}, model {target.shape}"
                )
            target[...] = source
