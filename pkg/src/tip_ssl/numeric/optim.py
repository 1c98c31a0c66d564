"""Adam with bias correction, global-norm clipping and a warmup/cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the shared step counter.

    Moments are keyed by parameter name so the state can be checkpointed
    alongside the parameters it belongs to.
    """

    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1.5e-6
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    sq = 0.0
    for p in params.values():
        sq += float(np.vdot(p.grad, p.grad))
    norm = math.sqrt(sq)
    if norm > max_norm:
        factor = np.float32(max_norm / (norm + 1e-6))
        for p in params.values():
            p.grad *= factor
    return norm


def adam_step(params: dict[str, Tensor], state: OptimizerState, lr: float | None = None) -> None:
    """One Adam update over ``params`` followed by a gradient reset.

    Weight decay is decoupled (applied to the weights, not folded into the
    gradient), so a zero gradient leaves the moments untouched.
    """
    lr = state.lr if lr is None else lr
    b1, b2 = state.betas
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient buffer")
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data -= (lr * update).astype(p.data.dtype)
        p.zero_grad()


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup from 0 to ``base_lr`` then cosine decay to 0."""
    if warmup_steps and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
