"""Parameter containers and the handful of layers the networks are built from."""

from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    """Base class that discovers parameters from attributes.

    Attributes that are grad-requiring tensors, modules, or lists of
    modules are walked in attribute-definition order, giving stable
    dotted names for checkpoints.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


@contextlib.contextmanager
def frozen(*modules: Module) -> Iterator[None]:
    """Temporarily stop gradient accumulation into the given modules.

    Gradients still flow *through* them to upstream inputs.
    """
    params = [p for m in modules for p in m.parameters()]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True
            p.zero_grad()


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(arr.astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 dtype=np.float32, gain: float = np.sqrt(2.0)):
        self.stride = stride
        std = gain / np.sqrt(cin * k * k)
        self.weight = _param(rng.normal(0.0, std, (cout, cin, k, k)), dtype)
        self.bias = _param(np.zeros(cout), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float32, gain: float = np.sqrt(2.0)):
        self.weight = _param(rng.normal(0.0, gain / np.sqrt(din), (din, dout)), dtype)
        if bias:
            self.bias = _param(np.zeros(dout), dtype)
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        out = F.matmul(x, self.weight)
        return F.add_bias(out, self.bias) if self.bias is not None else out


class InstanceNorm2d(Module):
    def __init__(self, channels: int, dtype=np.float32):
        self.gamma = _param(np.ones(channels), dtype)
        self.beta = _param(np.zeros(channels), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.instance_norm(x, self.gamma, self.beta)


class ResidualBlock(Module):
    """conv-norm-act-conv-norm with an identity skip."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32, slope: float = 0.2):
        self.slope = slope
        self.conv1 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.norm1 = InstanceNorm2d(channels, dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.norm2 = InstanceNorm2d(channels, dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = F.leaky_relu(self.norm1(self.conv1(x)), self.slope)
        return F.add(x, self.norm2(self.conv2(h)))
