"""Convolutional building blocks over a flat ``name -> array`` parameter dict."""
from __future__ import annotations

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor


class Layer:
    """Base class: subclasses list sub-layers or own parameters."""

    def children(self) -> list["Layer"]:
        return []

    def own_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {}

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        out = dict(self.own_params(rng))
        for c in self.children():
            out.update(c.init_params(rng))
        return out

    def param_names(self) -> list[str]:
        return list(self.init_params(np.random.default_rng(0)).keys())


class Conv(Layer):
    def __init__(self, name: str, cin: int, cout: int, k: int = 3, stride: int = 1,
                 dilation: int = 1, gain: float = 1.0):
        self.name, self.cin, self.cout, self.k = name, cin, cout, k
        self.stride, self.dilation, self.gain = stride, dilation, gain

    def own_params(self, rng):
        fan_in = self.k * self.k * self.cin
        std = self.gain * np.sqrt(2.0 / fan_in)
        return {
            f"{self.name}.w": rng.normal(0.0, std, (self.k, self.k, self.cin, self.cout)),
            f"{self.name}.b": np.zeros(self.cout),
        }

    def __call__(self, P: dict[str, Tensor], x: Tensor) -> Tensor:
        pad = self.dilation * (self.k // 2)
        return tc.conv2d(x, P[f"{self.name}.w"], P[f"{self.name}.b"],
                         stride=self.stride, padding=pad, dilation=self.dilation)


class ResBlock(Layer):
    """Pre-activation residual block: ``x + conv(act(conv(act(x))))``.

    A 1x1 projection is used on the shortcut when channel counts differ.
    """

    def __init__(self, name: str, cin: int, cout: int, dilation: int = 1):
        self.name = name
        self.conv1 = Conv(f"{name}.c1", cin, cout, dilation=dilation)
        self.conv2 = Conv(f"{name}.c2", cout, cout, dilation=dilation, gain=0.5)
        self.proj = Conv(f"{name}.proj", cin, cout, k=1) if cin != cout else None

    def children(self):
        return [c for c in (self.conv1, self.conv2, self.proj) if c is not None]

    def __call__(self, P, x):
        h = self.conv1(P, tc.leaky_relu(x))
        h = self.conv2(P, tc.leaky_relu(h))
        short = self.proj(P, x) if self.proj is not None else x
        return h + short


class Dense(Layer):
    """Fully connected layer on ``(B, fan_in)`` inputs."""

    def __init__(self, name: str, fan_in: int, fan_out: int, gain: float = 1.0):
        self.name, self.fan_in, self.fan_out, self.gain = name, fan_in, fan_out, gain

    def own_params(self, rng):
        std = self.gain * np.sqrt(1.0 / self.fan_in)
        return {
            f"{self.name}.w": rng.normal(0.0, std, (self.fan_in, self.fan_out)),
            f"{self.name}.b": np.zeros((1, self.fan_out)),
        }

    def __call__(self, P, x):
        # bias is added per row by stacking, so no broadcasting is needed
        y = tc.matmul(x, P[f"{self.name}.w"])
        ones = Tensor(np.ones((x.shape[0], 1)))
        return y + tc.matmul(ones, P[f"{self.name}.b"])
