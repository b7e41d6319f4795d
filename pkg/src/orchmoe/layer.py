"""The OrchMoE layer: frozen base projection plus a routed bank of LoRA skills."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .lora import LoraAdapter, adapter_output, base_output, init_adapter
from .skill_router import (
    CounterRNG,
    SkillAllocation,
    eval_allocation,
    init_allocation,
    relaxed_bernoulli,
    draw_noise,
)
from .task_router import TaskRouterParams, init_task_router, route

MODES = ("train", "eval")


def as_batch(x) -> tuple[Tensor, bool]:
    """Promote an n x d sample to a 1 x n x d batch; report whether we did."""
    x = ad.as_tensor(x)
    if x.ndim == 2:
        return ad.reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"expected n x d or batch x n x d input, got shape {x.shape}")
    return x, False


def check_input(x: Tensor, d: int) -> None:
    if x.shape[-1] != d:
        raise DimensionError(f"input width {x.shape[-1]} != layer dim {d}")
    if x.shape[-2] == 0 or x.shape[0] == 0:
        raise ContractError(f"empty input of shape {x.shape}")


def compose(x: Tensor, w0: Tensor, skills: Sequence[LoraAdapter], gates: Optional[Tensor]) -> Tensor:
    """x @ w0^T + sum_j gate_j * (x @ up_j^T @ down_j^T).

    ``gates`` broadcasts against batch x n x S: shape (batch, 1, S) for
    per-sample gates, (batch, n, S) for per-token gates, (S,) for static
    gates. ``None`` means one skill with gate 1.
    """
    out = base_output(x, w0)
    if gates is None:
        if len(skills) != 1:
            raise ContractError("ungated composition needs exactly one skill")
        return ad.add(out, adapter_output(x, skills[0]))
    if gates.shape[-1] != len(skills):
        raise DimensionError(f"{gates.shape[-1]} gates for {len(skills)} skills")
    for j, skill in enumerate(skills):
        g = ad.take(gates, (Ellipsis, slice(j, j + 1)))
        out = ad.add(out, ad.mul(g, adapter_output(x, skill)))
    return out


class OrchMoeLayer:
    """Frozen ``w0`` (d x d), S rank-r skills, a task router and a skill allocation."""

    arch = "orchmoe"

    def __init__(
        self,
        w0,
        skills: Sequence[LoraAdapter],
        task_router: TaskRouterParams,
        skill_alloc: SkillAllocation,
        layer_id: int = 0,
    ):
        self.w0 = Tensor(np.array(ad.as_tensor(w0).data), requires_grad=False)
        self.skills = list(skills)
        self.task_router = task_router
        self.skill_alloc = skill_alloc
        self.layer_id = layer_id
        self.allocation_override: Optional[np.ndarray] = None
        self.routers_frozen = False
        d = self.w0.shape[0]
        if self.w0.shape != (d, d):
            raise DimensionError(f"base weight must be square, got {self.w0.shape}")
        if not self.skills:
            raise ContractError("need at least one skill")
        for s in self.skills:
            if s.d != d:
                raise DimensionError(f"skill dim {s.d} != base dim {d}")
        if task_router.d_k != d:
            raise DimensionError(f"task router d_k {task_router.d_k} != base dim {d}")
        if skill_alloc.logits.shape != (task_router.n_tasks, len(self.skills)):
            raise DimensionError(
                f"allocation shape {skill_alloc.logits.shape} != ({task_router.n_tasks}, {len(self.skills)})"
            )

    @property
    def d(self) -> int:
        return self.w0.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.task_router.n_tasks

    @property
    def n_skills(self) -> int:
        return len(self.skills)

    @property
    def rank(self) -> int:
        return self.skills[0].rank

    def freeze_base(self) -> None:
        self.w0.requires_grad = False
        self.w0.grad = None

    def freeze_routers(self, frozen: bool = True) -> None:
        self.routers_frozen = frozen
        for p in self.router_parameters():
            p.requires_grad = not frozen
            p.grad = None

    def freeze_skills(self, frozen: bool = True) -> None:
        for s in self.skills:
            for p in s.parameters():
                p.requires_grad = not frozen
                p.grad = None

    def router_parameters(self) -> list:
        return self.task_router.parameters() + self.skill_alloc.parameters()

    def named_parameters(self) -> list:
        named = []
        for j, s in enumerate(self.skills):
            named += [(f"skill{j}.down", s.down), (f"skill{j}.up", s.up)]
        named += [
            ("task_router.w_task", self.task_router.w_task),
            ("task_router.bias", self.task_router.bias),
            ("skill_router.logits", self.skill_alloc.logits),
        ]
        return named

    def trainable_parameters(self) -> list:
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def allocation(self, mode: str, rng: Optional[CounterRNG] = None, step: int = 0, noise_u=None) -> Tensor:
        if self.allocation_override is not None:
            return Tensor(self.allocation_override)
        if mode == "eval":
            return eval_allocation(self.skill_alloc)
        if noise_u is None:
            if rng is None:
                raise ContractError("train-mode forward needs a noise stream")
            noise_u = draw_noise(self.skill_alloc.logits.shape, rng, self.layer_id, step)
        return relaxed_bernoulli(self.skill_alloc.logits, noise_u)

    def routing(self, x, mode: str = "eval", rng=None, step: int = 0, noise_u=None) -> dict:
        """Task logits, task weights, allocation and per-sample skill gates."""
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
        xb, _ = as_batch(x)
        check_input(xb, self.d)
        logits, weights = route(xb, self.task_router)
        alloc = self.allocation(mode, rng, step, noise_u)
        # s = W_alloc^T w per sample: the double sum over tasks and skills factored once
        gates = ad.matmul(weights, alloc)
        return {"task_logits": logits, "task_weights": weights, "allocation": alloc, "gates": gates}

    def forward(self, x, mode: str = "eval", rng=None, step: int = 0, noise_u=None, task_ids=None) -> Tensor:
        xb, squeeze = as_batch(x)
        r = self.routing(xb, mode, rng, step, noise_u)
        g = r["gates"]
        out = compose(xb, self.w0, self.skills, ad.reshape(g, (g.shape[0], 1, g.shape[1])))
        return ad.reshape(out, out.shape[1:]) if squeeze else out

    __call__ = forward


def init_orchmoe_layer(w0, n_tasks: int, n_skills: int, rank: int, seed: int, layer_id: int = 0) -> OrchMoeLayer:
    d = np.asarray(ad.as_tensor(w0).data).shape[0]
    skills = [init_adapter(d, rank, [seed, layer_id, 1, j]) for j in range(n_skills)]
    router = init_task_router(d, n_tasks, [seed, layer_id, 2])
    return OrchMoeLayer(w0, skills, router, init_allocation(n_tasks, n_skills), layer_id)


def orchmoe_param_count(d: int, rank: int, n_skills: int, n_tasks: int) -> int:
    """S * 2rd (skills) + d*T (task head) + T (bias) + T*S (allocation logits)."""
    return n_skills * 2 * rank * d + d * n_tasks + n_tasks + n_tasks * n_skills


def trainable_param_count(layer) -> int:
    return int(sum(p.data.size for p in layer.trainable_parameters()))
