"""Parameter containers and layers."""
from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Walks its attributes for parameters, sub-modules, and lists/dicts of them."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = set(params) - set(state)
            unexpected = set(state) - set(params)
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, arr in state.items():
            if name not in params:
                continue
            p = params[name]
            arr = np.asarray(arr)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def initialize(self, seed: int) -> None:
        """Initialise every parameter from a stream keyed by (seed, parameter name).

        Keying by name keeps shared sub-networks identical across model variants
        that add or drop other components.
        """
        scales = {prefix + "weight": m.init_scale
                  for prefix, m in self.named_modules() if isinstance(m, Conv2d)}
        for name, p in self.named_parameters():
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            if p.ndim >= 2:
                fan_in = int(np.prod(p.shape[1:]))
                bound = scales.get(name, 1.0) * np.sqrt(6.0 / fan_in)
                p.data = rng.uniform(-bound, bound, p.shape).astype(p.dtype)
            else:
                p.data = np.zeros(p.shape, dtype=p.dtype)

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, value in vars(self).items():
            yield from _walk_modules(value, prefix + name)


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key in sorted(value):
            yield from _walk(value[key], f"{name}.{key}")


def _walk_modules(value, name):
    if isinstance(value, Module):
        yield from value.named_modules(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_modules(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key in sorted(value):
            yield from _walk_modules(value[key], f"{name}.{key}")


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 bias: bool = True, pad_mode: str = "zero", init_scale: float = 1.0):
        self.stride = stride
        self.pad_mode = pad_mode
        self.weight = ad.parameter(np.zeros((out_channels, in_channels, kernel_size, kernel_size)))
        self.bias = ad.parameter(np.zeros(out_channels)) if bias else None
        self.init_scale = init_scale

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad_mode=self.pad_mode)
