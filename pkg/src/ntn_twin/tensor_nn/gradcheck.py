"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np


def numerical_grad(fn, param, index, eps=1e-5):
    """(f(p + eps) - f(p - eps)) / (2 eps) for one element of ``param``."""
    old = param.data[index]
    param.data[index] = old + eps
    fp = float(fn().data)
    param.data[index] = old - eps
    fm = float(fn().data)
    param.data[index] = old
    return (fp - fm) / (2.0 * eps)


def check_gradients(fn, params, n_samples=None, eps=1e-5, rng=None):
    """Compare analytic and numerical gradients of scalar ``fn()`` w.r.t. ``params``.

    Checks every element, or ``n_samples`` random (parameter, element) pairs.
    Returns the max-norm relative error ``max|a - n| / max(max|a|, max|n|)``.
    """
    rng = np.random.default_rng(rng)
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    if n_samples is None:
        picks = [(i, idx) for i, p in enumerate(params) for idx in np.ndindex(p.shape)]
    else:
        sizes = np.array([p.size for p in params], dtype=float)
        picks = []
        for _ in range(n_samples):
            i = int(rng.choice(len(params), p=sizes / sizes.sum()))
            idx = np.unravel_index(int(rng.integers(params[i].size)), params[i].shape)
            picks.append((i, idx))

    a_vals, n_vals = [], []
    for i, idx in picks:
        a_vals.append(analytic[i][idx])
        n_vals.append(numerical_grad(fn, params[i], idx, eps))
    a_vals, n_vals = np.array(a_vals), np.array(n_vals)
    scale = max(np.abs(a_vals).max(), np.abs(n_vals).max(), 1e-300)
    return float(np.abs(a_vals - n_vals).max() / scale)
