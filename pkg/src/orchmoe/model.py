"""Stack of adapted square projections forming the desk-scale model."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .baselines import init_routed_layer, routed_param_count
from .errors import ContractError
from .layer import init_orchmoe_layer, orchmoe_param_count

ARCHITECTURES = ("orchmoe", "lora", "moe-lora-topk", "task-id", "shared")


class AdapterModel:
    """``depth`` blocks applied in sequence; each block is one adapted projection."""

    def __init__(self, layers: Sequence):
        if not layers:
            raise ContractError("model needs at least one layer")
        self.layers = list(layers)

    @property
    def arch(self) -> str:
        return self.layers[0].arch

    @property
    def d(self) -> int:
        return self.layers[0].d

    @property
    def depth(self) -> int:
        return len(self.layers)

    def forward(self, x, mode: str = "eval", rng=None, step: int = 0, task_ids=None, noise_u=None):
        h = x
        for i, layer in enumerate(self.layers):
            u = None if noise_u is None else noise_u[i]
            h = layer.forward(h, mode=mode, rng=rng, step=step, noise_u=u, task_ids=task_ids)
        return h

    __call__ = forward

    def named_parameters(self) -> list:
        return [(f"layer{i}.{name}", p) for i, layer in enumerate(self.layers) for name, p in layer.named_parameters()]

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list:
        return [p for p in self.parameters() if p.requires_grad]

    def trainable_count(self) -> int:
        return int(sum(p.data.size for p in self.trainable_parameters()))

    def freeze_base(self) -> None:
        for layer in self.layers:
            layer.freeze_base()

    def freeze_routers(self, frozen: bool = True) -> None:
        for layer in self.layers:
            layer.freeze_routers(frozen)

    def freeze_skills(self, frozen: bool = True) -> None:
        for layer in self.layers:
            layer.freeze_skills(frozen)

    def router_parameters(self) -> list:
        return [p for layer in self.layers for p in layer.router_parameters()]

    def base_weights(self) -> list:
        return [layer.w0.data for layer in self.layers]

    def set_allocation_override(self, matrix: Optional[np.ndarray]) -> None:
        for layer in self.layers:
            if not hasattr(layer, "allocation_override"):
                raise ContractError(f"{layer.arch} layers have no skill allocation")
            layer.allocation_override = None if matrix is None else np.array(matrix, dtype=np.float64)


def build_model(
    arch: str,
    base_weights: Sequence[np.ndarray],
    n_skills: int,
    rank: int,
    seed: int,
    n_tasks: int = 1,
    k: int = 2,
    n_real_tasks: int = 1,
) -> AdapterModel:
    if arch not in ARCHITECTURES:
        raise ContractError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    layers = []
    for i, w0 in enumerate(base_weights):
        if arch == "orchmoe":
            layers.append(init_orchmoe_layer(w0, n_tasks, n_skills, rank, seed, layer_id=i))
        else:
            layers.append(init_routed_layer(arch, w0, n_skills, rank, seed, layer_id=i, k=k, n_real_tasks=n_real_tasks))
    return AdapterModel(layers)


def param_count(arch: str, d: int, depth: int, n_skills: int, rank: int, n_tasks: int = 1, n_real_tasks: int = 1) -> int:
    """Closed-form trainable count of a freshly built model."""
    if arch == "orchmoe":
        return depth * orchmoe_param_count(d, rank, n_skills, n_tasks)
    return depth * routed_param_count(arch, d, rank, n_skills, n_real_tasks)
