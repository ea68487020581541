#!/usr/bin/env python3
"""
Layer library
Parameter containers with dotted names and the dense/conv layers the models use
"""

from typing import Iterator

import numpy as np

from lib.tensor import (
    Parameter, Rng, ShapeError, Tensor, conv2d, conv_transpose2d, layer_norm,
)


class Module:
    """Parameter tree; attribute names become dotted parameter names"""

    def named_parameters(self, prefix: str = '') -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            path = f"{prefix}.{attr}" if prefix else attr
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def bind_names(self, prefix: str) -> 'Module':
        """Stamp every parameter with its full dotted path"""
        seen = set()
        for name, param in self.named_parameters(prefix):
            if name in seen:
                raise ValueError(f"Duplicate parameter name '{name}'")
            seen.add(name)
            param.name = name
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = {p.name: p for p in self.parameters()}
        missing = sorted(set(params) - set(state))
        if missing:
            raise KeyError(f"State is missing parameters: {missing[:5]}")
        for name, param in params.items():
            if state[name].shape != param.shape:
                raise ShapeError(f"{name}: stored shape {state[name].shape} vs model {param.shape}")
            param.assign(state[name])


class Linear(Module):
    """y = x @ W + b with W stored (in, out); bias starts at zero"""

    def __init__(self, in_dim: int, out_dim: int, rng: Rng, zero_init: bool = False):
        scale = 0.0 if zero_init else 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(rng.normal((in_dim, out_dim), scale))
        self.bias = Parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Linear: input width {x.shape[-1]} vs weight {self.weight.shape}")
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class MLP(Module):
    """Two-layer perceptron with SiLU hidden activation"""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng: Rng, zero_last: bool = False):
        self.hidden = Linear(in_dim, hidden_dim, rng)
        self.out = Linear(hidden_dim, out_dim, rng, zero_init=zero_last)

    def trunk(self, x: Tensor) -> Tensor:
        return self.hidden(x).silu()

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(self.trunk(x))


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int, rng: Rng):
        self.weight = Parameter(rng.normal((out_ch, in_ch, kernel, kernel), 1.0 / np.sqrt(in_ch * kernel * kernel)))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, self.stride, self.padding)
        return out + self.bias.reshape(1, -1, 1, 1)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int, rng: Rng):
        self.weight = Parameter(rng.normal((in_ch, out_ch, kernel, kernel), 1.0 / np.sqrt(in_ch * kernel * kernel)))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        out = conv_transpose2d(x, self.weight, self.stride, self.padding)
        return out + self.bias.reshape(1, -1, 1, 1)
