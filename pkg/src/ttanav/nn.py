"""Minimal module system: parameter registration, state dicts, initializers."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Module:
    """Container tracking parameters, buffers, and submodules by attribute name.

    Parameters are Tensors with requires_grad=True; buffers are plain numpy
    arrays carried in checkpoints but never optimized (running statistics).
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = np.asarray(array)
        object.__setattr__(self, name, self._buffers[name])

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield prefix + name, self._buffers[name]
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def named_modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for name, m in self._modules.items():
            yield from m.named_modules(prefix + name + ".")

    def state_dict(self) -> dict:
        d = {name: p.data.copy() for name, p in self.named_parameters()}
        d.update({name: b.copy() for name, b in self.named_buffers()})
        return d

    def load_state_dict(self, d: dict):
        own = {name: p for name, p in self.named_parameters()}
        bufs = dict(self._iter_buffer_slots())
        missing = (set(own) | set(bufs)) - set(d)
        extra = set(d) - (set(own) | set(bufs))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(d[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data[...] = arr
        for name, (mod, key) in bufs.items():
            arr = np.asarray(d[name], dtype=mod._buffers[key].dtype)
            if arr.shape != mod._buffers[key].shape:
                raise ValueError(f"{name}: shape {arr.shape} != {mod._buffers[key].shape}")
            mod._buffers[key][...] = arr

    def _iter_buffer_slots(self, prefix: str = ""):
        for name in self._buffers:
            yield prefix + name, (self, name)
        for name, m in self._modules.items():
            yield from m._iter_buffer_slots(prefix + name + ".")

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(shape, rng: np.random.Generator, kind: str = "he", fan_in: int | None = None) -> Tensor:
    """Initialize a trainable tensor. ``he`` scales by sqrt(2/fan_in); ``zero``/``one`` are constants."""
    if kind == "zero":
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)
    if kind == "one":
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)
    if fan_in is None:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(np.float32), requires_grad=True)
