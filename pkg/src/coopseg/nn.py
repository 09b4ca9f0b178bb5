"""Layer primitives on top of the tensor engine.

Modules register parameters, submodules, and plain-array buffers through
attribute assignment; ``named_state`` walks them in insertion order with
dotted names, which fixes the serialization order of checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def named_state(self) -> Iterator[tuple[str, np.ndarray]]:
        """Parameters then buffers, each in insertion order: the full model state."""
        for name, p in self.named_parameters():
            yield name, p.data
        for name, b in self.named_buffers():
            yield name, b

    def load_state(self, state: dict[str, np.ndarray]):
        own = dict(self.named_state())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in self.named_parameters():
            src = state[name]
            if src.shape != p.data.shape:
                raise ShapeError(f"state {name!r}: shape {src.shape} vs expected {p.data.shape}")
            p.data[...] = src.astype(p.data.dtype)
        for name, b in self.named_buffers():
            src = state[name]
            if src.shape != b.shape:
                raise ShapeError(f"state {name!r}: shape {src.shape} vs expected {b.shape}")
            b[...] = src.astype(b.dtype)

    def train(self):
        object.__setattr__(self, "training", True)
        for child in self._children.values():
            child.train()
        return self

    def eval(self):
        object.__setattr__(self, "training", False)
        for child in self._children.values():
            child.eval()
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, idx):
        return self._items[idx]


class Linear(Module):
    """y = x @ W + b with W of shape (in, out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, init_std: float = 0.02, dtype=np.float32):
        super().__init__()
        self.weight = Tensor(
            (rng.standard_normal((d_in, d_out)) * init_std).astype(dtype), requires_grad=True
        )
        self.bias = (
            Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class Conv2d(Module):
    """Odd-kernel 2-d convolution, He-normal init, optional bias."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator,
                 padding: int = 0, bias: bool = True, dtype=np.float32):
        super().__init__()
        k = kernel_size
        std = np.sqrt(2.0 / (c_in * k * k))
        self.weight = Tensor(
            (rng.standard_normal((c_out, c_in, k, k)) * std).astype(dtype), requires_grad=True
        )
        self.bias = (
            Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
        )
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.weight, stride=1, padding=self.padding)
        if self.bias is not None:
            y = y + T.reshape(self.bias, (1, -1, 1, 1))
        return y


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float64))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float64))
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.batchnorm_channel(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm_lastdim(x, self.gamma, self.beta, eps=self.eps)


class ConvUnit(Module):
    """3x3 conv (pad 1) + BatchNorm + ReLU, the decoder's unit block."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, 3, rng, padding=1, bias=False, dtype=dtype)
        self.bn = BatchNorm2d(c_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.conv(x)))


@dataclass
class MultiScaleFeatures:
    """Branch outputs at 1/16, 1/8, 1/4 of the input resolution."""

    s16: Tensor
    s8: Tensor
    s4: Tensor

    def as_tuple(self) -> tuple:
        return (self.s16, self.s8, self.s4)
