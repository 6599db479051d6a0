"""Named parameter collections backed by autodiff tensors."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .rng import RngStream


class ParamSet:
    """Ordered name -> Tensor mapping with init/copy/export helpers."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=trainable, op="param")
        self._tensors[name] = t
        return t

    def add_normal(self, name: str, shape, rng: RngStream, std: float = 0.01,
                   trainable: bool = True) -> Tensor:
        return self.add(name, rng.split(name).normal(shape, std=std), trainable)

    def add_zeros(self, name: str, shape, trainable: bool = True) -> Tensor:
        return self.add(name, np.zeros(shape), trainable)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> dict[str, Tensor]:
        return dict(self._tensors)

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self._tensors.items() if t.requires_grad}

    def set_trainable(self, flag: bool):
        for t in self._tensors.values():
            t.requires_grad = flag

    def values(self) -> dict[str, np.ndarray]:
        """Copies of all parameter arrays, in insertion order."""
        return {k: t.value.copy() for k, t in self._tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for name, t in self._tensors.items():
            if name not in values:
                raise KeyError(f"missing parameter {name!r} in checkpoint")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.value.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != expected {t.value.shape}")
            t.value = arr.copy()

    def zero_grads(self):
        for t in self._tensors.values():
            t.zero_grad()
