"""Low-rank adapters: the skill unit and the weighted multi-adapter merge."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError


@dataclass
class LoraAdapter:
    """Pair of low-rank factors; the weight update is ``down @ up``.

    ``down`` is d x r and ``up`` is r x d.
    """

    down: Tensor
    up: Tensor

    def __post_init__(self):
        d, r = self.down.shape
        if self.up.shape != (r, d):
            raise DimensionError(f"up must be {(r, d)}, got {self.up.shape}")
        if not 1 <= r < d:
            raise ContractError(f"rank must satisfy 1 <= r < d, got r={r}, d={d}")

    @property
    def d(self) -> int:
        return self.down.shape[0]

    @property
    def rank(self) -> int:
        return self.down.shape[1]

    def parameters(self) -> list:
        return [self.down, self.up]

    def delta(self) -> np.ndarray:
        """Dense d x d update. Analysis only; the forward pass never builds it."""
        return self.down.data @ self.up.data


def init_adapter(d: int, r: int, seed) -> LoraAdapter:
    """Gaussian ``down`` with variance 1/d, zero ``up``: the update starts at zero.

    ``seed`` is anything ``np.random.default_rng`` accepts (int or int list).
    """
    if not 1 <= r < d:
        raise ContractError(f"rank must satisfy 1 <= r < d, got r={r}, d={d}")
    rng = np.random.default_rng(seed)
    down = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, r))
    return LoraAdapter(Tensor(down, requires_grad=True), Tensor(np.zeros((r, d)), requires_grad=True))


def adapter_output(x, adapter: LoraAdapter) -> Tensor:
    """x @ (down @ up)^T evaluated as (x @ up^T) @ down^T."""
    x = ad.as_tensor(x)
    if x.shape[-1] != adapter.d:
        raise DimensionError(f"input width {x.shape[-1]} != adapter dim {adapter.d}")
    return ad.matmul(ad.matmul(x, ad.transpose(adapter.up)), ad.transpose(adapter.down))


def base_output(x, w0) -> Tensor:
    x, w0 = ad.as_tensor(x), ad.as_tensor(w0)
    if w0.ndim != 2 or w0.shape[0] != w0.shape[1]:
        raise DimensionError(f"base weight must be square, got {w0.shape}")
    if x.shape[-1] != w0.shape[1]:
        raise DimensionError(f"input width {x.shape[-1]} != base dim {w0.shape[1]}")
    return ad.matmul(x, ad.transpose(w0))


def lora_forward(x, w0, adapter: LoraAdapter) -> Tensor:
    """x @ w0^T + x @ (down @ up)^T without materializing the d x d update."""
    return ad.add(base_output(x, w0), adapter_output(x, adapter))


def merge_adapters(adapters: Sequence[LoraAdapter], weights: Sequence[float]) -> np.ndarray:
    """Dense sum_i w_i * down_i @ up_i."""
    if len(adapters) == 0:
        raise ContractError("merge_adapters needs at least one adapter")
    if len(adapters) != len(weights):
        raise ContractError(f"{len(adapters)} adapters but {len(weights)} weights")
    d = adapters[0].d
    for a in adapters:
        if a.d != d:
            raise DimensionError(f"mixed adapter dims {d} and {a.d}")
    out = np.zeros((d, d))
    for a, w in zip(adapters, weights):
        out += float(w) * (a.down.data @ a.up.data)
    return out
