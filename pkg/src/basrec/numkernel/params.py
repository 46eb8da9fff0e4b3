"""Named parameter tensors with Adam optimizer state."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


class ParamStore:
    """Owns model parameters and their first/second moment accumulators.

    Parameter order is the insertion order; checkpoints rely on it.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"parameter '{name}' already registered")
        t = Tensor(np.asarray(values, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        """Bias-corrected Adam update; a missing gradient counts as zero."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - beta1**t
        bc2 = 1.0 - beta2**t
        for name, p in self._params.items():
            g = p.grad if p.grad is not None else 0.0
            if np.shape(g) not in ((), p.data.shape):
                raise ShapeError(f"adam_step: gradient shape {np.shape(g)} != parameter shape {p.data.shape} for '{name}'")
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * np.square(g)
            p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ShapeError(f"load_values: shape {arr.shape} != {p.data.shape} for '{name}'")
            p.data[...] = arr.astype(self.dtype)
