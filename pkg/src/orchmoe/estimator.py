"""scikit-learn style front end: fit / predict / score over token-sequence batches."""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError
from sklearn.metrics import r2_score

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DivergenceError
from .model import ARCHITECTURES, AdapterModel, build_model
from .optim import OptimizerState, adamw_step
from .skill_router import CounterRNG
from .validation import check_targets, check_task_ids, check_tokens

PREDICT_CHUNK = 256


def mse_loss(pred: Tensor, target) -> Tensor:
    diff = ad.sub(pred, target)
    return ad.mean(ad.mul(diff, diff))


class MultiAdapterRegressor(RegressorMixin, BaseEstimator):
    """Frozen linear base plus trainable adapters under a chosen routing regime.

    X has shape (n_samples, n_tokens, d); y has the same shape. ``task_ids``
    is only consulted by the task-id architecture.

    Parameters
    ----------
    architecture : {"orchmoe", "lora", "moe-lora-topk", "task-id", "shared"}
    base_weights : list of (d, d) arrays
        Frozen projections, one per block. Required.
    n_abstract_tasks : int or None
        Abstract task slots of the OrchMoE router; None uses the number of
        distinct task IDs seen in ``fit`` (1 when none are given).
    n_skills, rank, top_k : int
        Skill bank size, per-skill rank, kept skills per token (top-k only).
    lr_max, weight_decay, warmup_ratio, epochs, batch_size
        AdamW recipe with linear warmup and linear decay.
    random_state : int
        Seeds initialization, shuffling and allocation noise.
    freeze_routers : bool
        Train skills only; routers keep their initial values.
    allocation_override : array or None
        Fixed T x S allocation replacing the sampled one (OrchMoE only).
    """

    def __init__(
        self,
        architecture: str = "orchmoe",
        base_weights=None,
        n_abstract_tasks: Optional[int] = None,
        n_skills: int = 4,
        rank: int = 4,
        top_k: int = 2,
        lr_max: float = 1e-2,
        weight_decay: float = 0.01,
        warmup_ratio: float = 0.06,
        epochs: int = 10,
        batch_size: int = 4,
        random_state: int = 0,
        freeze_routers: bool = False,
        allocation_override=None,
    ):
        self.architecture = architecture
        self.base_weights = base_weights
        self.n_abstract_tasks = n_abstract_tasks
        self.n_skills = n_skills
        self.rank = rank
        self.top_k = top_k
        self.lr_max = lr_max
        self.weight_decay = weight_decay
        self.warmup_ratio = warmup_ratio
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state
        self.freeze_routers = freeze_routers
        self.allocation_override = allocation_override

    def _build(self, n_real_tasks: int) -> AdapterModel:
        if self.architecture not in ARCHITECTURES:
            raise ContractError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if self.base_weights is None or len(self.base_weights) == 0:
            raise ContractError("base_weights is required")
        n_tasks = self.n_abstract_tasks or n_real_tasks
        model = build_model(
            self.architecture,
            [np.asarray(w, dtype=np.float64) for w in self.base_weights],
            n_skills=self.n_skills,
            rank=self.rank,
            seed=self.random_state,
            n_tasks=n_tasks,
            k=self.top_k,
            n_real_tasks=n_real_tasks,
        )
        model.freeze_base()
        if self.freeze_routers:
            model.freeze_routers()
        if self.allocation_override is not None:
            model.set_allocation_override(self.allocation_override)
        return model

    def fit(self, X, y, task_ids=None, callback: Optional[Callable] = None):
        """Train from scratch. ``callback(epoch, self)`` runs after every epoch."""
        X = check_tokens(X)
        y = check_targets(y, X)
        ids = check_task_ids(task_ids, len(X))
        n_real = int(ids.max()) + 1 if ids is not None else 1
        self.model_ = self._build(n_real)
        self.n_real_tasks_ = n_real
        self.n_features_in_ = X.shape[-1]
        self.noise_ = CounterRNG(self.random_state)
        self.history_ = {"train_loss": [], "step_loss": []}
        self.step_ = 0
        self._run_epochs(X, y, ids, self.epochs, callback, shuffle_key=0)
        return self

    def adapt_routers(self, X, y, task_ids=None, epochs: Optional[int] = None):
        """Fine-tune only the router parameters; skills and base stay frozen.

        With no router (plain LoRA) or no samples, the model is left as is.
        """
        self._check_fitted()
        epochs = self.epochs if epochs is None else epochs
        self.model_.freeze_skills()
        self.model_.freeze_routers(False)
        X = np.asarray(X, dtype=np.float64)
        if len(X) == 0 or not self.model_.trainable_parameters() or epochs == 0:
            return self
        X = check_tokens(X)
        y = check_targets(y, X)
        ids = check_task_ids(task_ids, len(X))
        self._run_epochs(X, y, ids, epochs, None, shuffle_key=1)
        return self

    def _run_epochs(self, X, y, ids, epochs: int, callback, shuffle_key: int) -> None:
        n = len(X)
        per_epoch = math.ceil(n / self.batch_size)
        params = self.model_.trainable_parameters()
        state = OptimizerState(
            total_steps=max(1, epochs * per_epoch),
            lr_max=self.lr_max,
            weight_decay=self.weight_decay,
            warmup_ratio=self.warmup_ratio,
        )
        order_rng = np.random.default_rng([self.random_state, 7, shuffle_key])
        self.step_ = getattr(self, "step_", 0)
        for epoch in range(epochs):
            order = order_rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                for p in params:
                    p.zero_grad()
                pred = self.model_.forward(
                    X[idx], mode="train", rng=self.noise_, step=self.step_,
                    task_ids=None if ids is None else ids[idx],
                )
                loss = mse_loss(pred, y[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite training loss at step {self.step_} (epoch {epoch})")
                ad.backward(loss)
                adamw_step(params, [p.grad for p in params], state)
                self.step_ += 1
                total += value * len(idx)
                self.history_["step_loss"].append(value)
            self.history_["train_loss"].append(total / n)
            if callback is not None:
                callback(epoch, self)

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before using this estimator")

    def predict(self, X, task_ids=None) -> np.ndarray:
        self._check_fitted()
        X = check_tokens(X, d=self.n_features_in_)
        ids = check_task_ids(task_ids, len(X))
        out = []
        for start in range(0, len(X), PREDICT_CHUNK):
            sl = slice(start, start + PREDICT_CHUNK)
            out.append(self.model_.forward(X[sl], mode="eval", task_ids=None if ids is None else ids[sl]).data)
        return np.concatenate(out) if out else np.zeros_like(X)

    def mse(self, X, y, task_ids=None) -> float:
        y = np.asarray(y, dtype=np.float64)
        return float(np.mean((self.predict(X, task_ids) - y) ** 2))

    def score(self, X, y, sample_weight=None, task_ids=None) -> float:
        """R^2 over all output coordinates."""
        pred = self.predict(X, task_ids)
        y = np.asarray(y, dtype=np.float64)
        return float(r2_score(y.reshape(len(y), -1), pred.reshape(len(pred), -1), sample_weight=sample_weight))

    def trainable_count(self) -> int:
        self._check_fitted()
        return self.model_.trainable_count()

    def routing_summary(self, X) -> list:
        """Per-layer eval-mode routing for OrchMoE: logits, task weights, allocation, gates."""
        self._check_fitted()
        if self.model_.arch != "orchmoe":
            raise ContractError("routing summaries exist only for the orchmoe architecture")
        X = check_tokens(X, d=self.n_features_in_)
        h = ad.as_tensor(X)
        out = []
        for layer in self.model_.layers:
            r = layer.routing(h, mode="eval")
            out.append({k: v.data for k, v in r.items()})
            h = layer.forward(h, mode="eval")
        return out
