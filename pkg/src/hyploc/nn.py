"""Minimal parameter containers on top of :mod:`hyploc.tensorcore`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor


class Module:
    """Attribute-walking parameter registry, in the spirit of torch.nn.Module."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item
            elif isinstance(val, dict):
                for k in sorted(val):
                    item = val[k]
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)))


class Linear(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int):
        self.weight = glorot(rng, c_in, c_out)
        self.bias = param(np.zeros(c_out))

    def __call__(self, x) -> Tensor:
        return tc.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, rng: np.random.Generator, widths: list[int], final_act: bool = False):
        self.layers = [Linear(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        self.final_act = final_act

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_act:
                x = tc.relu(x)
        return x
