"""Task-to-skill allocation logits and their Gumbel-sigmoid relaxation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

U_CLAMP = 1e-7


@dataclass
class SkillAllocation:
    logits: Tensor  # T x S

    @property
    def n_tasks(self) -> int:
        return self.logits.shape[0]

    @property
    def n_skills(self) -> int:
        return self.logits.shape[1]

    def parameters(self) -> list:
        return [self.logits]


def init_allocation(n_tasks: int, n_skills: int) -> SkillAllocation:
    # zero logits: every skill starts half-on for every abstract task
    return SkillAllocation(Tensor(np.zeros((n_tasks, n_skills)), requires_grad=True))


class CounterRNG:
    """Counter-keyed uniform noise.

    Each ``(seed, *counter)`` key opens its own generator, so a draw depends
    only on its key and never on how many draws happened before it.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def uniform(self, shape, *counter: int) -> np.ndarray:
        key = [self.seed, *[int(c) for c in counter]]
        return np.random.default_rng(key).random(shape)


def _scalar_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _log_sigmoid(x: float) -> float:
    return min(x, 0.0) - math.log1p(math.exp(-abs(x)))


def gumbel_sigmoid(w: float, u: float) -> float:
    """sigma(log[sigma(w) u / ((1 - sigma(w)) (1 - u))]) for one entry.

    The log-ratio is formed from log-sigmoids, with 1 - sigma(w) taken as
    sigma(-w), so the expression stays accurate when the gate saturates.
    """
    if not 0.0 < u < 1.0:
        raise ContractError(f"u must lie in (0, 1), got {u}")
    if not math.isfinite(w):
        raise ContractError(f"logit must be finite, got {w}")
    z = _log_sigmoid(w) + math.log(u) - _log_sigmoid(-w) - math.log1p(-u)
    return _scalar_sigmoid(z)


def relaxed_bernoulli(logits, u: np.ndarray) -> Tensor:
    """Elementwise Gumbel-sigmoid on a tensor of logits for fixed noise ``u``."""
    logits = ad.as_tensor(logits)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != logits.shape:
        raise ContractError(f"noise shape {u.shape} != logits shape {logits.shape}")
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ContractError("noise entries must lie in (0, 1)")
    noise_logit = np.log(u) - np.log1p(-u)
    ratio = ad.sub(ad.log_sigmoid(logits), ad.log_sigmoid(ad.mul(logits, -1.0)))
    return ad.sigmoid(ad.add(ratio, noise_logit))


def draw_noise(shape, rng: CounterRNG, *counter: int) -> np.ndarray:
    u = rng.uniform(shape, *counter)
    return np.clip(u, U_CLAMP, 1.0 - U_CLAMP)


def sample_allocation(alloc: SkillAllocation, rng: CounterRNG, *counter: int) -> Tensor:
    """Relaxed-binary T x S sample; gradients reach the logits through it."""
    if rng is None:
        raise ContractError("sample_allocation needs a noise stream")
    u = draw_noise(alloc.logits.shape, rng, *counter)
    return relaxed_bernoulli(alloc.logits, u)


def eval_allocation(alloc: SkillAllocation) -> Tensor:
    """Deterministic sigma(logits), the median of the relaxed sample."""
    return ad.sigmoid(alloc.logits)


def hard_allocation(alloc: SkillAllocation, threshold: float = 0.5) -> np.ndarray:
    """0/1 view for visualization only."""
    return (eval_allocation(alloc).data > threshold).astype(np.float64)
