"""Strided convolutional backbone for projection images, plus a residual block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .nn import Module, param
from .tensorcore import Tensor


@dataclass(frozen=True)
class ConvStackConfig:
    # (out_channels, kernel, stride) per stage
    stages: tuple[tuple[int, int, int], ...] = ((16, 3, 2), (32, 3, 2), (64, 3, 2))
    in_channels: int = 1
    input_scale: float = 10.0

    @property
    def out_dim(self) -> int:
        return self.stages[-1][0]

    def output_hw(self, H: int, W: int) -> tuple[int, int]:
        for _, k, s in self.stages:
            if H % s or W % s:
                raise ValueError(f"{H}x{W} grid does not divide by stride {s}")
            H, W = H // s, W // s
        return H, W


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int,
                 stride: int = 1, padding: int | None = None):
        fan_in = kernel * kernel * c_in
        self.weight = param(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(kernel, kernel, c_in, c_out)))
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x) -> Tensor:
        return tc.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvStack(Module):
    def __init__(self, rng: np.random.Generator, cfg: ConvStackConfig = ConvStackConfig()):
        self.cfg = cfg
        self.convs = []
        c = cfg.in_channels
        for c_out, k, s in cfg.stages:
            self.convs.append(Conv2d(rng, c, c_out, k, s))
            c = c_out

    @property
    def out_dim(self) -> int:
        return self.cfg.out_dim

    def __call__(self, images) -> tuple[Tensor, tuple[int, int]]:
        return encode2d(images, self)


def encode2d(images, stack: ConvStack) -> tuple[Tensor, tuple[int, int]]:
    """Images ``(B, H, W)`` or ``(H, W)`` -> tokens ``(B, Hs*Ws, C)`` and the grid shape."""
    arr = images.values if hasattr(images, "values") else np.asarray(images, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    B, H, W = arr.shape
    Hs, Ws = stack.cfg.output_hw(H, W)
    x = Tensor(arr[..., None] / stack.cfg.input_scale)
    for conv in stack.convs:
        x = tc.relu(conv(x))
    tokens = x.reshape(B, Hs * Ws, stack.out_dim)
    if single:
        tokens = tokens.reshape(Hs * Ws, stack.out_dim)
    return tokens, (Hs, Ws)


class ResBlock(Module):
    """``x + conv(relu(conv(x)))`` with 3x3 same-padding convolutions."""

    def __init__(self, rng: np.random.Generator, channels: int):
        self.conv1 = Conv2d(rng, channels, channels, 3)
        self.conv2 = Conv2d(rng, channels, channels, 3)
        self.conv2.weight.data *= 0.1

    def zero_(self) -> "ResBlock":
        for p in self.parameters():
            p.data[...] = 0.0
        return self

    def __call__(self, tokens, grid: tuple[int, int]) -> Tensor:
        return res_block(tokens, grid, self)


def res_block(tokens, grid: tuple[int, int], block: ResBlock) -> Tensor:
    """Apply the block to ``(B, Hs*Ws, C)`` tokens laid out row-major on ``grid``."""
    tokens = tc.as_tensor(tokens)
    Hs, Ws = grid
    n, C = tokens.shape[-2], tokens.shape[-1]
    if n != Hs * Ws:
        raise ValueError(f"{n} tokens cannot be reshaped to a {Hs}x{Ws} grid")
    lead = tokens.shape[:-2]
    x = tokens.reshape((-1, Hs, Ws, C))
    y = x + block.conv2(tc.relu(block.conv1(x)))
    return y.reshape(lead + (n, C))
