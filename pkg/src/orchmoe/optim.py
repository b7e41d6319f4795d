"""AdamW with decoupled weight decay and a linear warmup / linear decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError

REFERENCE_LR = 5e-5
REFERENCE_WEIGHT_DECAY = 0.01
REFERENCE_WARMUP_RATIO = 0.06


@dataclass
class OptimizerState:
    total_steps: int
    lr_max: float = REFERENCE_LR
    weight_decay: float = REFERENCE_WEIGHT_DECAY
    warmup_ratio: float = REFERENCE_WARMUP_RATIO
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.total_steps < 1:
            raise ContractError(f"total_steps must be positive, got {self.total_steps}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ContractError(f"warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")

    @property
    def warmup_steps(self) -> int:
        return int(math.ceil(self.warmup_ratio * self.total_steps))


def lr_at(step: int, state: OptimizerState) -> float:
    """Linear 0 -> lr_max over the warmup steps, then linear decay to 0 at total_steps."""
    total = state.total_steps
    if not 0 <= step <= total:
        raise ContractError(f"step {step} outside [0, {total}]")
    warm = state.warmup_steps
    if step < warm:
        return state.lr_max * step / warm
    if total == warm:
        return state.lr_max
    return state.lr_max * (total - step) / (total - warm)


def adamw_step(params: Sequence, grads: Sequence[Optional[np.ndarray]], state: OptimizerState) -> float:
    """One in-place update of ``params`` (tensors; ``.data`` is modified).

    Returns the learning rate used. Weight decay acts on the parameters,
    not through the moment estimates.
    """
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, g in enumerate(grads):
        if g is None:
            raise ContractError(f"missing gradient for trainable parameter {i}")
        if g.shape != params[i].data.shape:
            raise ContractError(f"gradient {i} has shape {g.shape}, parameter has {params[i].data.shape}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ContractError("parameter list changed between optimizer steps")
    if state.step >= state.total_steps:
        raise ContractError(f"optimizer already ran its {state.total_steps} steps")
    state.step += 1
    t = state.step
    lr = lr_at(t, state)
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return lr
