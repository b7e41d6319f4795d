"""Per-sample abstract-task weights from a parameter-free self-attention mix."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError


@dataclass
class TaskRouterParams:
    w_task: Tensor  # d_k x T
    bias: Tensor  # T

    def __post_init__(self):
        if self.w_task.ndim != 2:
            raise DimensionError(f"w_task must be 2-D, got {self.w_task.shape}")
        if self.bias.shape != (self.w_task.shape[1],):
            raise DimensionError(f"bias shape {self.bias.shape} != ({self.w_task.shape[1]},)")
        if self.d_k < 1 or self.n_tasks < 1:
            raise ContractError("task router needs d_k >= 1 and T >= 1")

    @property
    def d_k(self) -> int:
        return self.w_task.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.w_task.shape[1]

    def parameters(self) -> list:
        return [self.w_task, self.bias]


def init_task_router(d_k: int, n_tasks: int, seed) -> TaskRouterParams:
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0 / math.sqrt(d_k), size=(d_k, n_tasks))
    return TaskRouterParams(Tensor(w, requires_grad=True), Tensor(np.zeros(n_tasks), requires_grad=True))


def attention_mix(x) -> Tensor:
    """softmax(X X^T / sqrt(d_k)) X + X over each sample's token rows.

    Accepts n x d_k or batch x n x d_k.
    """
    x = ad.as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ContractError(f"attention_mix needs at least one token row, got shape {x.shape}")
    scale = 1.0 / math.sqrt(x.shape[-1])
    scores = ad.mul(ad.matmul(x, ad.transpose(x)), scale)
    return ad.add(ad.matmul(ad.softmax_rows(scores), x), x)


def task_logits(x_hat, params: TaskRouterParams) -> Tensor:
    """Mean-pool the token rows, then apply the affine head: pooled @ W_task + bias."""
    x_hat = ad.as_tensor(x_hat)
    if x_hat.shape[-1] != params.d_k:
        raise DimensionError(f"hidden width {x_hat.shape[-1]} != router d_k {params.d_k}")
    pooled = ad.mean(x_hat, axis=-2)
    if pooled.ndim == 1:
        pooled = ad.reshape(pooled, (1, -1))
        return ad.reshape(ad.add(ad.matmul(pooled, params.w_task), params.bias), (params.n_tasks,))
    return ad.add(ad.matmul(pooled, params.w_task), params.bias)


def task_weights(logits) -> Tensor:
    """Softmax over the abstract tasks."""
    logits = ad.as_tensor(logits)
    if logits.ndim == 1:
        return ad.reshape(ad.softmax_rows(ad.reshape(logits, (1, -1))), logits.shape)
    return ad.softmax_rows(logits)


def route(x, params: TaskRouterParams) -> tuple[Tensor, Tensor]:
    """Full chain; returns (logits, weights)."""
    logits = task_logits(attention_mix(x), params)
    return logits, task_weights(logits)
