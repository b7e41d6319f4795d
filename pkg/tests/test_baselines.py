import numpy as np
import pytest

from orchmoe import autodiff as ad
from orchmoe.autodiff import Tensor
from orchmoe.baselines import (
    RoutedLoraLayer,
    SharedRouter,
    TaskIdRouter,
    TopKRouter,
    init_routed_layer,
    routed_param_count,
    shared_route,
    task_id_route,
    topk_gates,
    topk_mask,
    topk_route,
)
from orchmoe.errors import ContractError, LookupContractError
from orchmoe.lora import LoraAdapter, lora_forward


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=float), requires_grad=grad)


def random_skills(rng, d, r, n):
    return [LoraAdapter(t(rng.normal(size=(d, r))), t(rng.normal(size=(r, d)))) for _ in range(n)]


def test_shared_examples():
    assert shared_route(SharedRouter(t([0.7]))).data.tolist() == [1.0]
    assert np.array_equal(shared_route(SharedRouter(t(np.zeros(4)))).data, np.full(4, 0.25))


def test_shared_step_moves_mass_toward_skill(rng):
    router = SharedRouter(t(np.zeros(4), grad=True))
    before = shared_route(router).data[2]
    ad.backward(ad.mul(ad.take(shared_route(router), 2), -1.0))
    router.weights.data -= 0.5 * router.weights.grad
    assert shared_route(router).data[2] > before


def test_task_id_rows_and_errors():
    table = t([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    g = task_id_route(TaskIdRouter(table), 1).data
    e = np.exp([0.0, 2.0, 0.0])
    assert np.max(np.abs(g - e / e.sum())) < 1e-15
    with pytest.raises(LookupContractError) as exc:
        task_id_route(TaskIdRouter(table), 5)
    assert "5" in str(exc.value)
    with pytest.raises(KeyError):
        task_id_route(TaskIdRouter(table), -1)


def test_task_id_rows_diverge_after_training(rng):
    d, S = 5, 3
    w0 = rng.normal(size=(d, d))
    skills = random_skills(rng, d, 2, S)
    for s in skills:
        s.down.requires_grad = s.up.requires_grad = False
    layer = RoutedLoraLayer(w0, skills, TaskIdRouter(t(np.zeros((2, S)), grad=True)))
    x = rng.normal(size=(2, 3, d))
    targets = [lora_forward(x[0], w0, skills[0]).data, lora_forward(x[1], w0, skills[2]).data]
    for _ in range(50):
        layer.router.table.grad = None
        out = layer.forward(x, task_ids=np.array([0, 1]))
        diff = ad.sub(out, np.stack(targets))
        ad.backward(ad.mean(ad.mul(diff, diff)))
        layer.router.table.data -= 0.05 * layer.router.table.grad
    g = task_id_route(layer.router, np.array([0, 1])).data
    assert np.argmax(g[0]) == 0 and np.argmax(g[1]) == 2


def test_topk_examples():
    proj = t(np.eye(4))
    gates = topk_route(TopKRouter(proj, 2), [3.0, 1.0, 3.0, 0.0]).data
    assert gates.tolist() == [0.5, 0.0, 0.5, 0.0]
    dense = topk_route(TopKRouter(proj, 4), [3.0, 1.0, 3.0, 0.0]).data
    e = np.exp([3.0, 1.0, 3.0, 0.0])
    assert np.max(np.abs(dense - e / e.sum())) < 1e-15
    one = topk_route(TopKRouter(proj, 1), [0.1, 2.0, -1.0, 0.0]).data
    assert one.tolist() == [0.0, 1.0, 0.0, 0.0]


def test_topk_tie_break_lowest_index():
    assert topk_mask(np.zeros((1, 4)), 2).tolist() == [[True, True, False, False]]


def test_topk_invalid_k():
    with pytest.raises(ContractError):
        TopKRouter(t(np.zeros((3, 4))), 5)
    with pytest.raises(ContractError):
        TopKRouter(t(np.zeros((3, 4))), 0)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_topk_support_and_normalization(rng, k):
    router = TopKRouter(t(rng.normal(size=(6, 5))), k)
    g = topk_gates(rng.normal(size=(10, 6)), router).data
    assert np.all((g > 0).sum(axis=1) == k)
    assert np.max(np.abs(g.sum(axis=1) - 1)) < 1e-12


def test_topk_permutation_equivariance(rng):
    proj = rng.normal(size=(6, 5))
    x = rng.normal(size=(4, 6))
    perm = rng.permutation(5)
    a = topk_gates(x, TopKRouter(t(proj), 2)).data
    b = topk_gates(x, TopKRouter(t(proj[:, perm]), 2)).data
    assert np.max(np.abs(a[:, perm] - b)) < 1e-15


def test_layer_matches_explicit_gating(rng):
    d, S = 6, 3
    w0 = rng.normal(size=(d, d))
    skills = random_skills(rng, d, 2, S)
    x = rng.normal(size=(2, 4, d))
    for router in (SharedRouter(t(rng.normal(size=S))), TopKRouter(t(rng.normal(size=(d, S))), 2)):
        layer = RoutedLoraLayer(w0, skills, router)
        out = layer.forward(x).data
        if isinstance(router, SharedRouter):
            g = np.broadcast_to(shared_route(router).data, (2, 4, S))
        else:
            g = topk_gates(x, router).data
        ref = x @ w0.T + sum(g[..., j : j + 1] * (x @ skills[j].delta().T) for j in range(S))
        assert np.max(np.abs(out - ref)) < 1e-12


def test_single_lora_layer(rng):
    d = 6
    layer = init_routed_layer("lora", rng.normal(size=(d, d)), 3, 2, seed=0)
    assert layer.n_skills == 1
    layer.skills[0].up.data = rng.normal(size=(2, d))
    x = rng.normal(size=(4, d))
    assert np.max(np.abs(layer.forward(x).data - lora_forward(x, layer.w0.data, layer.skills[0]).data)) < 1e-12


@pytest.mark.parametrize("arch", ["lora", "shared", "moe-lora-topk", "task-id"])
def test_param_counts(arch):
    layer = init_routed_layer(arch, np.zeros((8, 8)), 3, 2, seed=0, k=2, n_real_tasks=4)
    count = sum(p.data.size for p in layer.trainable_parameters())
    assert count == routed_param_count(arch, 8, 2, 3, 4)
