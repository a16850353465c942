"""Adam / AdamW with bias correction and the cosine-annealing schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def cosine_anneal(lr0: float, t_max: float, eta_min: float, epoch: float) -> float:
    """eta_min + (lr0 - eta_min) (1 + cos(pi e / T_max)) / 2."""
    return eta_min + (lr0 - eta_min) * (1.0 + math.cos(math.pi * epoch / t_max)) / 2.0


@dataclass
class OptimState:
    scheme: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    """Adam; with ``decoupled=True`` weight decay is applied to the weights directly (AdamW)."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, decoupled=False):
        self.params = list(params)
        self.state = OptimState("adamw" if decoupled else "adam", lr, tuple(betas), eps, weight_decay, 0,
                                [np.zeros_like(p.data) for p in self.params],
                                [np.zeros_like(p.data) for p in self.params])

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        st = self.state
        if not any(p.grad is not None for p in self.params):
            raise RuntimeError("optimizer step with no populated gradients")
        st.step += 1
        b1, b2 = st.betas
        c1 = 1.0 - b1**st.step
        c2 = 1.0 - b2**st.step
        for p, m, v in zip(self.params, st.m, st.v):
            if p.grad is None:
                continue
            g = p.grad
            if st.weight_decay and st.scheme == "adam":
                g = g + st.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if st.weight_decay and st.scheme == "adamw":
                p.data *= 1.0 - st.lr * st.weight_decay
            p.data -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


def AdamW(params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
    return Adam(params, lr, betas, eps, weight_decay, decoupled=True)
