"""AdamW with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatchError
from .tensor import Tensor


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamWState:
    """Per-parameter moments plus the shared step counter."""
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState, cfg: AdamWConfig) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Empty moment buffers are created lazily; shapes are checked on every call.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatchError(
                f"adamw_step: grad shape {g.shape} != param shape {p.shape} for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if cfg.weight_decay:
            p -= cfg.lr * cfg.weight_decay * p
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p -= cfg.lr * update


class AdamW:
    """Optimizer over a named dict of parameter Tensors."""

    def __init__(self, params: dict[str, Tensor], cfg: AdamWConfig | None = None):
        self.params = params
        self.cfg = cfg or AdamWConfig()
        self.state = AdamWState()

    def step(self) -> None:
        raw = {k: t.data for k, t in self.params.items()}
        grads = {k: t.grad for k, t in self.params.items() if t.grad is not None}
        adamw_step(raw, grads, self.state, self.cfg)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
