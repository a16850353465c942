"""Parameters, modules and the standard layers built on :mod:`.tensor` ops."""
from __future__ import annotations

import math

import numpy as np

from . import conv as C
from . import tensor as T
from .tensor import DiffTensor


class Parameter(DiffTensor):
    """Learnable tensor carrying the name and the initialisation scheme used to create it."""

    __slots__ = ("init",)

    def __init__(self, data, name=None, init="custom"):
        super().__init__(data, requires_grad=True, name=name)
        self.init = init


def fan_in_uniform(rng, shape, fan_in, name=None):
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), name, init=f"uniform(+-1/sqrt({fan_in}))")


def zeros(shape, name=None):
    return Parameter(np.zeros(shape), name, init="zeros")


def ones(shape, name=None):
    return Parameter(np.ones(shape), name, init="ones")


class Module:
    """Attribute-walking container: parameters and sub-modules are discovered automatically."""

    training = True

    def named_parameters(self, prefix=""):
        out = []
        for key, val in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out.append((full, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(full + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{full}.{i}", item))
        names = [n for n, _ in out]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    """y = x W + b over the last axis."""

    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.weight = fan_in_uniform(rng, (in_dim, out_dim), in_dim)
        self.bias = zeros((out_dim,)) if bias else None

    def forward(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, rng, kernel=3, stride=1):
        fan_in = in_ch * kernel * kernel
        self.weight = fan_in_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in)
        self.bias = zeros((out_ch,))
        self.stride = stride
        self.padding = kernel // 2

    def forward(self, x):
        return C.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class GroupNorm(Module):
    def __init__(self, channels, groups=8, eps=1e-5):
        self.gamma = ones((channels,))
        self.beta = zeros((channels,))
        self.groups = groups
        self.eps = eps

    def forward(self, x):
        return C.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = ones((dim,))
        self.beta = zeros((dim,))
        self.eps = eps

    def forward(self, x):
        return C.layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, p, rng):
        self.p = p
        self.rng = rng

    def forward(self, x):
        return T.dropout(x, self.p, self.rng, self.training)
