"""Comparison routing regimes over the same skill bank.

* shared: one learnable gate vector for every input
* task-id: one gate row per ground-truth task ID
* top-k: per-token single-layer scorer, k highest scores kept
* lora: a single adapter, no router

All gates are softmax-normalized so compared models differ only in how
routing is structured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, LookupContractError
from .layer import as_batch, check_input, compose
from .lora import LoraAdapter, init_adapter


@dataclass
class SharedRouter:
    weights: Tensor  # S

    def parameters(self) -> list:
        return [self.weights]


@dataclass
class TaskIdRouter:
    table: Tensor  # T_real x S

    @property
    def n_real_tasks(self) -> int:
        return self.table.shape[0]

    def parameters(self) -> list:
        return [self.table]


@dataclass
class TopKRouter:
    proj: Tensor  # d x S
    k: int

    def __post_init__(self):
        n_skills = self.proj.shape[1]
        if not 1 <= self.k <= n_skills:
            raise ContractError(f"k must satisfy 1 <= k <= S={n_skills}, got {self.k}")

    def parameters(self) -> list:
        return [self.proj]


def shared_route(router: SharedRouter) -> Tensor:
    return ad.reshape(ad.softmax_rows(ad.reshape(router.weights, (1, -1))), router.weights.shape)


def task_id_route(router: TaskIdRouter, task_id) -> Tensor:
    """Softmax of the table row for each task ID (scalar or 1-D array of IDs)."""
    ids = np.atleast_1d(np.asarray(task_id))
    if ids.dtype.kind not in "iu":
        raise LookupContractError(f"task IDs must be integers, got {ids.dtype}")
    bad = ids[(ids < 0) | (ids >= router.n_real_tasks)]
    if bad.size:
        raise LookupContractError(f"unknown task ID {int(bad[0])}; known IDs are 0..{router.n_real_tasks - 1}")
    onehot = np.zeros((ids.size, router.n_real_tasks))
    onehot[np.arange(ids.size), ids] = 1.0
    gates = ad.softmax_rows(ad.matmul(Tensor(onehot), router.table))
    if np.ndim(task_id) == 0:
        return ad.reshape(gates, (router.table.shape[1],))
    return gates


def topk_mask(logits: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k largest entries per row; ties go to the lowest index."""
    n_skills = logits.shape[-1]
    if not 1 <= k <= n_skills:
        raise ContractError(f"k must satisfy 1 <= k <= S={n_skills}, got {k}")
    order = np.argsort(-logits, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(logits.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


def topk_gates(tokens, router: TopKRouter) -> Tensor:
    """Per-token sparse gates for tokens of shape (..., d)."""
    tokens = ad.as_tensor(tokens)
    if tokens.shape[-1] != router.proj.shape[0]:
        raise DimensionError(f"token width {tokens.shape[-1]} != router dim {router.proj.shape[0]}")
    squeeze = tokens.ndim == 1
    if squeeze:
        tokens = ad.reshape(tokens, (1, -1))
    logits = ad.matmul(tokens, router.proj)
    gates = ad.softmax_rows(logits, mask=topk_mask(logits.data, router.k))
    return ad.reshape(gates, gates.shape[1:]) if squeeze else gates


def topk_route(router: TopKRouter, token) -> Tensor:
    return topk_gates(token, router)


class RoutedLoraLayer:
    """Frozen base plus skills gated by one of the baseline routers.

    ``router=None`` with a single skill is plain LoRA.
    """

    def __init__(self, w0, skills: Sequence[LoraAdapter], router=None, layer_id: int = 0):
        self.w0 = Tensor(np.array(ad.as_tensor(w0).data), requires_grad=False)
        self.skills = list(skills)
        self.router = router
        self.layer_id = layer_id
        d = self.w0.shape[0]
        if self.w0.shape != (d, d):
            raise DimensionError(f"base weight must be square, got {self.w0.shape}")
        if router is None and len(self.skills) != 1:
            raise ContractError("an unrouted layer holds exactly one adapter")
        for s in self.skills:
            if s.d != d:
                raise DimensionError(f"skill dim {s.d} != base dim {d}")

    @property
    def arch(self) -> str:
        return {
            type(None): "lora",
            SharedRouter: "shared",
            TaskIdRouter: "task-id",
            TopKRouter: "moe-lora-topk",
        }[type(self.router)]

    @property
    def d(self) -> int:
        return self.w0.shape[0]

    @property
    def n_skills(self) -> int:
        return len(self.skills)

    def freeze_base(self) -> None:
        self.w0.requires_grad = False
        self.w0.grad = None

    def router_parameters(self) -> list:
        return [] if self.router is None else self.router.parameters()

    def freeze_routers(self, frozen: bool = True) -> None:
        for p in self.router_parameters():
            p.requires_grad = not frozen
            p.grad = None

    def freeze_skills(self, frozen: bool = True) -> None:
        for s in self.skills:
            for p in s.parameters():
                p.requires_grad = not frozen
                p.grad = None

    def named_parameters(self) -> list:
        named = []
        for j, s in enumerate(self.skills):
            named += [(f"skill{j}.down", s.down), (f"skill{j}.up", s.up)]
        if isinstance(self.router, SharedRouter):
            named.append(("router.weights", self.router.weights))
        elif isinstance(self.router, TaskIdRouter):
            named.append(("router.table", self.router.table))
        elif isinstance(self.router, TopKRouter):
            named.append(("router.proj", self.router.proj))
        return named

    def trainable_parameters(self) -> list:
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def gates(self, xb: Tensor, task_ids=None) -> Optional[Tensor]:
        if self.router is None:
            return None
        if isinstance(self.router, SharedRouter):
            return shared_route(self.router)
        if isinstance(self.router, TaskIdRouter):
            if task_ids is None:
                raise ContractError("task-id routing needs task IDs")
            ids = np.asarray(task_ids).reshape(-1)
            if ids.size != xb.shape[0]:
                raise DimensionError(f"{ids.size} task IDs for a batch of {xb.shape[0]}")
            g = task_id_route(self.router, ids)
            return ad.reshape(g, (g.shape[0], 1, g.shape[1]))
        return topk_gates(xb, self.router)

    def forward(self, x, mode: str = "eval", rng=None, step: int = 0, noise_u=None, task_ids=None) -> Tensor:
        xb, squeeze = as_batch(x)
        check_input(xb, self.d)
        out = compose(xb, self.w0, self.skills, self.gates(xb, task_ids))
        return ad.reshape(out, out.shape[1:]) if squeeze else out

    __call__ = forward


def init_routed_layer(
    arch: str,
    w0,
    n_skills: int,
    rank: int,
    seed: int,
    layer_id: int = 0,
    k: int = 2,
    n_real_tasks: int = 1,
) -> RoutedLoraLayer:
    d = np.asarray(ad.as_tensor(w0).data).shape[0]
    if arch == "lora":
        n_skills = 1
    skills = [init_adapter(d, rank, [seed, layer_id, 1, j]) for j in range(n_skills)]
    if arch == "lora":
        router = None
    elif arch == "shared":
        router = SharedRouter(Tensor(np.zeros(n_skills), requires_grad=True))
    elif arch == "task-id":
        router = TaskIdRouter(Tensor(np.zeros((n_real_tasks, n_skills)), requires_grad=True))
    elif arch == "moe-lora-topk":
        rng = np.random.default_rng([seed, layer_id, 3])
        proj = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, n_skills))
        router = TopKRouter(Tensor(proj, requires_grad=True), k)
    else:
        raise ContractError(f"unknown baseline architecture {arch!r}")
    return RoutedLoraLayer(w0, skills, router, layer_id)


def routed_param_count(arch: str, d: int, rank: int, n_skills: int, n_real_tasks: int = 1) -> int:
    skills = n_skills * 2 * rank * d
    if arch == "lora":
        return 2 * rank * d
    if arch == "shared":
        return skills + n_skills
    if arch == "task-id":
        return skills + n_real_tasks * n_skills
    if arch == "moe-lora-topk":
        return skills + d * n_skills
    raise ContractError(f"unknown baseline architecture {arch!r}")
