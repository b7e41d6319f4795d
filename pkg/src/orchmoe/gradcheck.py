"""Registry of finite-difference gradient checks for every differentiable op."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_grad, max_relative_error

STEP = 1e-5
TOLERANCE = 1e-4

CHECKS: dict = {}


def register(name: str):
    def deco(fn):
        CHECKS[name] = fn
        return fn

    return deco


def check_function(build: Callable[..., Tensor], inputs: list, seed: int = 0) -> float:
    """Max relative error over all inputs of sum(build(*inputs) * R) / size, R fixed random."""
    rng = np.random.default_rng([seed, 99])
    probe = build(*[Tensor(a) for a in inputs])
    weights = rng.uniform(-1.0, 1.0, size=probe.shape)
    scale = 1.0 / max(1, probe.data.size)

    def scalar(*arrays) -> Tensor:
        return ad.mul(ad.tsum(ad.mul(build(*arrays), weights)), scale)

    tensors = [Tensor(a.copy(), requires_grad=True) for a in inputs]
    ad.backward(scalar(*tensors))
    worst = 0.0
    for i, a in enumerate(inputs):

        def f(v, i=i):
            args = [Tensor(x) for x in inputs]
            args[i] = Tensor(v)
            return scalar(*args).item()

        numeric = finite_diff_grad(f, a, STEP)
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(a)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def _u(rng, *shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


@register("add")
def _add(rng):
    return check_function(ad.add, [_u(rng, 3, 4), _u(rng, 1, 4)])


@register("sub")
def _sub(rng):
    return check_function(ad.sub, [_u(rng, 3, 4), _u(rng, 3, 1)])


@register("mul")
def _mul(rng):
    return check_function(ad.mul, [_u(rng, 2, 3, 4), _u(rng, 3, 1)])


@register("matmul")
def _matmul(rng):
    return check_function(ad.matmul, [_u(rng, 4, 5), _u(rng, 5, 3)])


@register("matmul_batched")
def _matmul_b(rng):
    return check_function(ad.matmul, [_u(rng, 2, 3, 5), _u(rng, 5, 4)])


@register("transpose")
def _transpose(rng):
    return check_function(ad.transpose, [_u(rng, 2, 3, 4)])


@register("reshape")
def _reshape(rng):
    return check_function(lambda a: ad.reshape(a, (4, 3)), [_u(rng, 3, 4)])


@register("take")
def _take(rng):
    return check_function(lambda a: ad.take(a, (Ellipsis, slice(1, 3))), [_u(rng, 2, 3, 4)])


@register("sum")
def _sum(rng):
    return check_function(lambda a: ad.tsum(a, axis=1), [_u(rng, 3, 4)])


@register("mean")
def _mean(rng):
    return check_function(lambda a: ad.mean(a, axis=-2), [_u(rng, 2, 3, 4)])


@register("exp")
def _exp(rng):
    return check_function(ad.exp, [_u(rng, 3, 4)])


@register("log")
def _log(rng):
    return check_function(ad.log, [_u(rng, 3, 4, lo=0.2, hi=2.0)])


@register("sigmoid")
def _sigmoid(rng):
    return check_function(ad.sigmoid, [_u(rng, 3, 4)])


@register("log_sigmoid")
def _log_sigmoid(rng):
    return check_function(ad.log_sigmoid, [_u(rng, 3, 4)])


@register("softmax_rows")
def _softmax(rng):
    return check_function(ad.softmax_rows, [_u(rng, 3, 5)])


@register("softmax_rows_masked")
def _softmax_masked(rng):
    x = _u(rng, 3, 5)
    mask = np.zeros_like(x, dtype=bool)
    mask[:, [0, 2, 3]] = True
    return check_function(lambda a: ad.softmax_rows(a, mask=mask), [x])


@register("stack_last")
def _stack(rng):
    return check_function(lambda a, b: ad.stack_last([a, b]), [_u(rng, 2, 3), _u(rng, 2, 3)])


@register("attention_mix")
def _attention(rng):
    from .task_router import attention_mix

    return check_function(attention_mix, [_u(rng, 2, 3, 4)])


@register("task_router_chain")
def _task_chain(rng):
    from .task_router import TaskRouterParams, route

    def build(x, w, b):
        return route(x, TaskRouterParams(w, b))[1]

    return check_function(build, [_u(rng, 2, 3, 4), _u(rng, 4, 3), _u(rng, 3)])


@register("gumbel_sigmoid")
def _gumbel(rng):
    from .skill_router import relaxed_bernoulli

    u = rng.uniform(0.05, 0.95, size=(3, 4))
    return check_function(lambda w: relaxed_bernoulli(w, u), [_u(rng, 3, 4)])


@register("lora_forward")
def _lora(rng):
    from .lora import LoraAdapter, lora_forward

    w0 = _u(rng, 6, 6)
    return check_function(lambda x, dn, up: lora_forward(x, w0, LoraAdapter(dn, up)), [_u(rng, 3, 6), _u(rng, 6, 2), _u(rng, 2, 6)])


def _orchmoe_check(rng, mode: str) -> float:
    from .layer import OrchMoeLayer
    from .lora import LoraAdapter
    from .skill_router import SkillAllocation
    from .task_router import TaskRouterParams

    d, r, n_tasks, n_skills = 5, 2, 3, 2
    w0 = _u(rng, d, d)
    noise = rng.uniform(0.05, 0.95, size=(n_tasks, n_skills))
    x = _u(rng, 2, 3, d, lo=-1.0, hi=1.0)

    def build(x, d0, u0, d1, u1, wt, b, logits):
        layer = OrchMoeLayer(
            w0,
            [LoraAdapter(d0, u0), LoraAdapter(d1, u1)],
            TaskRouterParams(wt, b),
            SkillAllocation(logits),
        )
        return layer.forward(x, mode=mode, noise_u=noise if mode == "train" else None)

    inputs = [x, _u(rng, d, r), _u(rng, r, d), _u(rng, d, r), _u(rng, r, d), _u(rng, d, n_tasks), _u(rng, n_tasks), _u(rng, n_tasks, n_skills)]
    return check_function(build, inputs)


@register("orchmoe_layer_eval")
def _orch_eval(rng):
    return _orchmoe_check(rng, "eval")


@register("orchmoe_layer_train_frozen_noise")
def _orch_train(rng):
    return _orchmoe_check(rng, "train")


@register("topk_layer")
def _topk(rng):
    from .baselines import RoutedLoraLayer, TopKRouter
    from .lora import LoraAdapter

    d = 5
    w0 = _u(rng, d, d)

    def build(x, d0, u0, d1, u1, d2, u2, proj):
        skills = [LoraAdapter(d0, u0), LoraAdapter(d1, u1), LoraAdapter(d2, u2)]
        return RoutedLoraLayer(w0, skills, TopKRouter(proj, 2)).forward(x)

    return check_function(build, [_u(rng, 2, 3, d)] + [m for _ in range(3) for m in (_u(rng, d, 2), _u(rng, 2, d))] + [_u(rng, d, 3)])


@register("shared_layer")
def _shared(rng):
    from .baselines import RoutedLoraLayer, SharedRouter
    from .lora import LoraAdapter

    d = 5
    w0 = _u(rng, d, d)

    def build(x, d0, u0, d1, u1, wts):
        return RoutedLoraLayer(w0, [LoraAdapter(d0, u0), LoraAdapter(d1, u1)], SharedRouter(wts)).forward(x)

    return check_function(build, [_u(rng, 2, 3, d), _u(rng, d, 2), _u(rng, 2, d), _u(rng, d, 2), _u(rng, 2, d), _u(rng, 2)])


@register("task_id_layer")
def _taskid(rng):
    from .baselines import RoutedLoraLayer, TaskIdRouter
    from .lora import LoraAdapter

    d = 5
    w0 = _u(rng, d, d)
    ids = np.array([1, 0])

    def build(x, d0, u0, d1, u1, table):
        return RoutedLoraLayer(w0, [LoraAdapter(d0, u0), LoraAdapter(d1, u1)], TaskIdRouter(table)).forward(x, task_ids=ids)

    return check_function(build, [_u(rng, 2, 3, d), _u(rng, d, 2), _u(rng, 2, d), _u(rng, d, 2), _u(rng, 2, d), _u(rng, 3, 2)])


@register("mse_loss")
def _mse(rng):
    from .estimator import mse_loss

    target = _u(rng, 3, 4)
    return check_function(lambda p: ad.reshape(mse_loss(p, target), (1,)), [_u(rng, 3, 4)])


def run_all(seed: int = 0) -> dict:
    """Name -> max relative error, each check with its own seeded inputs."""
    results = {}
    for i, (name, fn) in enumerate(CHECKS.items()):
        results[name] = float(fn(np.random.default_rng([seed, i])))
    return results
