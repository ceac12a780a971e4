"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeMismatch, Tensor

__all__ = ["AdamState", "Adam", "adam_step", "clip_grad_norm"]


class AdamState:
    """First/second moment accumulators and step counter for one parameter set."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state: AdamState):
    """One in-place Adam update; increments the step counter."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch(
            f"adam_step: got {len(params)} params, {len(grads)} grads, state of {len(state.m)}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        data = p.data if isinstance(p, Tensor) else p
        if g.shape != data.shape or state.m[i].shape != data.shape:
            raise ShapeMismatch(
                f"adam_step: param {i} shape {data.shape} vs grad {g.shape} vs moment {state.m[i].shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(data.dtype)


def clip_grad_norm(grads, max_norm):
    """Scale gradients in place so their global L2 norm is <= max_norm.

    Returns the pre-clip norm. NaN/inf norms leave gradients untouched so
    the caller's NaN guard can report them.
    """
    total = 0.0
    for g in grads:
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if np.isfinite(norm) and norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


class Adam:
    """Optimizer facade over :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, clip_norm=None):
        grads = []
        for p in self.params:
            grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        norm = clip_grad_norm(grads, clip_norm) if clip_norm else None
        adam_step(self.params, grads, self.state)
        return norm

    def zero_grad(self):
        for p in self.params:
            p.grad = None
