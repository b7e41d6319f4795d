"""Synthetic multi-task regression suites with planted group structure.

Every task is a linear teacher built inside the model class: per layer,
``W0 + group_map + task_perturbation``. Each sample is a short token
sequence whose first token is the task's instruction token (a group
prototype plus small jitter); the rest are uniform on [-1, 1]^d. Models
without task-ID routing must read the task off that token.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError


@dataclass
class SyntheticTaskSuite:
    base_weights: list  # depth x (d x d)
    group_maps: list  # G x depth x (d x d)
    prototypes: np.ndarray  # G x d
    groups: np.ndarray  # T_real
    perturbations: list  # T_real x depth x (d x d)
    tokens: np.ndarray  # T_real x d, instruction token per task
    train_x: np.ndarray  # T_real x n_train x n_tokens x d
    train_y: np.ndarray
    eval_x: np.ndarray  # T_real x n_eval x n_tokens x d
    eval_y: np.ndarray
    task_keys: list
    noise_std: float
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def n_tasks(self) -> int:
        return len(self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.group_maps)

    @property
    def d(self) -> int:
        return self.base_weights[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.base_weights)

    def teacher(self, task: int) -> list:
        g = int(self.groups[task])
        return [w0 + gm + p for w0, gm, p in zip(self.base_weights, self.group_maps[g], self.perturbations[task])]

    def flat(self, split: str = "train") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(X, Y, task_ids) with tasks concatenated in order."""
        x, y = (self.train_x, self.train_y) if split == "train" else (self.eval_x, self.eval_y)
        n = x.shape[1]
        ids = np.repeat(np.arange(self.n_tasks), n)
        return x.reshape((-1,) + x.shape[2:]), y.reshape((-1,) + y.shape[2:]), ids

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (*self.base_weights, self.prototypes, self.groups, self.tokens, self.train_x, self.train_y, self.eval_x, self.eval_y):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        for maps in (*self.group_maps, *self.perturbations):
            for m in maps:
                h.update(np.ascontiguousarray(m).tobytes())
        return h.hexdigest()


def _low_rank(rng: np.random.Generator, d: int, rank: int, scale: float) -> np.ndarray:
    # entries have variance scale^2 / d, matching a N(0, 1/d) base weight at scale 1
    b = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, rank))
    a = rng.normal(0.0, 1.0, size=(rank, d))
    return scale * (b @ a) / math.sqrt(rank)


def _teacher_outputs(x: np.ndarray, teacher: list) -> np.ndarray:
    h = x
    for w in teacher:
        h = h @ w.T
    return h


def _samples(rng, token: np.ndarray, teacher: list, n: int, n_tokens: int, noise_std: float):
    d = token.shape[0]
    x = rng.uniform(-1.0, 1.0, size=(n, n_tokens, d))
    x[:, 0, :] = token
    y = _teacher_outputs(x, teacher)
    if noise_std > 0:
        y = y + rng.normal(0.0, noise_std, size=y.shape)
    return x, y


def generate_suite(
    T_real: int,
    G: int,
    n_train: int,
    n_eval: int,
    d: int,
    noise_std: float,
    seed: int,
    n_tokens: int = 4,
    depth: int = 1,
    group_rank: int = 2,
    group_scale: float = 1.0,
    perturb_rank: int = 1,
    perturb_scale: float = 0.1,
    token_jitter: float = 0.1,
) -> SyntheticTaskSuite:
    """Deterministic given ``seed``; task t belongs to group t mod G."""
    if T_real < 1 or G < 1 or G > T_real:
        raise ContractError(f"need 1 <= G <= T_real, got G={G}, T_real={T_real}")
    if min(n_train, n_eval) < 0 or d < 2 or n_tokens < 1 or depth < 1:
        raise ContractError("sample counts must be non-negative and d >= 2, n_tokens >= 1, depth >= 1")
    if noise_std < 0 or perturb_scale < 0 or token_jitter < 0:
        raise ContractError("noise and perturbation scales must be non-negative")
    if not 1 <= group_rank <= d or not 1 <= perturb_rank <= d:
        raise ContractError("teacher ranks must lie in [1, d]")
    rng = np.random.default_rng([seed, 0])
    base = [rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d)) for _ in range(depth)]
    group_maps = [[_low_rank(rng, d, group_rank, group_scale) for _ in range(depth)] for _ in range(G)]
    prototypes = rng.uniform(-1.0, 1.0, size=(G, d))
    params = dict(
        T_real=T_real, G=G, n_train=n_train, n_eval=n_eval, d=d, noise_std=noise_std, seed=seed,
        n_tokens=n_tokens, depth=depth, group_rank=group_rank, group_scale=group_scale,
        perturb_rank=perturb_rank, perturb_scale=perturb_scale, token_jitter=token_jitter,
    )
    suite = SyntheticTaskSuite(
        base_weights=base, group_maps=group_maps, prototypes=prototypes, groups=np.zeros(0, dtype=np.int64),
        perturbations=[], tokens=np.zeros((0, d)),
        train_x=np.zeros((0, n_train, n_tokens, d)), train_y=np.zeros((0, n_train, n_tokens, d)),
        eval_x=np.zeros((0, n_eval, n_tokens, d)), eval_y=np.zeros((0, n_eval, n_tokens, d)),
        task_keys=[], noise_std=noise_std, seed=seed, params=params,
    )
    return spawn_tasks(suite, T_real, spawn=0, n_train=n_train, n_eval=n_eval)


def spawn_tasks(
    parent: SyntheticTaskSuite,
    n_new: int,
    spawn: int,
    n_train: Optional[int] = None,
    n_eval: Optional[int] = None,
    clone_of: Optional[list] = None,
) -> SyntheticTaskSuite:
    """New tasks drawn from ``parent``'s groups (same base and group maps).

    ``spawn`` labels the draw; different labels give disjoint task keys.
    ``clone_of`` copies the teachers and instruction tokens of those parent
    tasks (fresh samples, new keys) instead of drawing new ones.
    """
    p = parent.params
    n_train = p["n_train"] if n_train is None else n_train
    n_eval = p["n_eval"] if n_eval is None else n_eval
    d, depth, n_tokens = parent.d, parent.depth, p["n_tokens"]
    rng = np.random.default_rng([parent.seed, 1, spawn])
    groups, perts, tokens = [], [], []
    for t in range(n_new):
        if clone_of is not None:
            src = clone_of[t]
            groups.append(int(parent.groups[src]))
            perts.append([m.copy() for m in parent.perturbations[src]])
            tokens.append(parent.tokens[src].copy())
            continue
        g = t % parent.n_groups
        groups.append(g)
        perts.append([_low_rank(rng, d, p["perturb_rank"], p["perturb_scale"]) for _ in range(depth)])
        jitter = rng.uniform(-1.0, 1.0, size=d) * p["token_jitter"]
        tokens.append(np.clip(parent.prototypes[g] + jitter, -1.0, 1.0))
    tx, ty, ex, ey = [], [], [], []
    for t in range(n_new):
        teacher = [w0 + gm + pt for w0, gm, pt in zip(parent.base_weights, parent.group_maps[groups[t]], perts[t])]
        a, b = _samples(rng, tokens[t], teacher, n_train, n_tokens, parent.noise_std)
        c, e = _samples(rng, tokens[t], teacher, n_eval, n_tokens, parent.noise_std)
        tx.append(a), ty.append(b), ex.append(c), ey.append(e)

    def _stack(parts, n):
        return np.stack(parts) if parts else np.zeros((0, n, n_tokens, d))

    params = dict(p, T_real=n_new, n_train=n_train, n_eval=n_eval)
    return replace(
        parent,
        groups=np.asarray(groups, dtype=np.int64),
        perturbations=perts,
        tokens=np.asarray(tokens, dtype=np.float64).reshape(n_new, d),
        train_x=_stack(tx, n_train), train_y=_stack(ty, n_train),
        eval_x=_stack(ex, n_eval), eval_y=_stack(ey, n_eval),
        task_keys=[(parent.seed, spawn, t) for t in range(n_new)],
        params=params,
    )
