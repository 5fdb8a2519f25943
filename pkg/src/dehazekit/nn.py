"""Parameter containers and the handful of layers the networks are built from."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container: attributes that are Tensors (with
    ``requires_grad``), Modules, or lists of either are discovered recursively."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def kaiming(rng: np.random.Generator, shape, fan_in: int, gain: float = np.sqrt(2.0)) -> Tensor:
    std = gain / np.sqrt(fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(np.float32), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, bias=True, groups=1, padding_mode="replicate", gain=np.sqrt(2.0)):
        self.k, self.groups, self.padding_mode = k, groups, padding_mode
        fan_in = (cin // groups) * k * k
        self.weight = kaiming(rng, (cout, cin // groups, k, k), fan_in, gain)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, padding=self.k // 2,
                        padding_mode=self.padding_mode, groups=self.groups)


class ConvStack(Module):
    """``depth`` 3x3 convolutions with ReLU between them."""

    def __init__(self, cin, cout, rng, hidden=16, depth=3, k=3):
        if depth < 1:
            raise T.ContractError("ConvStack depth must be >= 1")
        widths = [cin] + [hidden] * (depth - 1) + [cout]
        self.layers = [Conv2d(widths[i], widths[i + 1], k, rng,
                              gain=np.sqrt(2.0) if i < depth - 1 else 1.0)
                       for i in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x
