import numpy as np
import pytest

from orchmoe import autodiff as ad
from orchmoe.autodiff import Tensor
from orchmoe.errors import ContractError, DimensionError
from orchmoe.lora import LoraAdapter, init_adapter, lora_forward, merge_adapters


def random_adapter(rng, d, r):
    return LoraAdapter(Tensor(rng.normal(size=(d, r)), requires_grad=True), Tensor(rng.normal(size=(r, d)), requires_grad=True))


@pytest.mark.parametrize("d,r,seed", [(4, 1, 0), (8, 2, 3), (16, 5, 99)])
def test_init_delta_is_zero(d, r, seed):
    a = init_adapter(d, r, seed)
    assert np.array_equal(a.delta(), np.zeros((d, d)))
    assert a.down.shape == (d, r) and a.up.shape == (r, d)


def test_init_is_deterministic():
    a, b = init_adapter(8, 2, 5), init_adapter(8, 2, 5)
    assert a.down.data.tobytes() == b.down.data.tobytes()
    assert a.up.data.tobytes() == b.up.data.tobytes()


def test_init_rejects_rank_not_below_dim():
    with pytest.raises(ContractError):
        init_adapter(4, 4, 0)
    with pytest.raises(ContractError):
        init_adapter(4, 0, 0)


def test_delta_rank_after_gradient_step(rng):
    d, r = 8, 2
    a = init_adapter(d, r, 1)
    w0 = rng.normal(size=(d, d))
    x, y = rng.normal(size=(5, d)), rng.normal(size=(5, d))
    diff = ad.sub(lora_forward(x, w0, a), y)
    ad.backward(ad.mean(ad.mul(diff, diff)))
    a.down.data -= 0.1 * a.down.grad
    a.up.data -= 0.1 * a.up.grad
    sv = np.linalg.svd(a.delta(), compute_uv=False)
    assert sv[0] > 1e-6
    assert np.all(sv[r:] < 1e-10)


def test_zero_up_gives_base_output(rng):
    d = 6
    a = init_adapter(d, 2, 0)
    x, w0 = rng.normal(size=(3, d)), rng.normal(size=(d, d))
    assert np.array_equal(lora_forward(x, w0, a).data, x @ w0.T)


def test_zero_base_matches_dense_delta(rng):
    d = 6
    a = random_adapter(rng, d, 2)
    x = rng.normal(size=(3, d))
    out = lora_forward(x, np.zeros((d, d)), a).data
    assert np.max(np.abs(out - x @ (a.down.data @ a.up.data).T)) < 1e-12


def test_factored_equals_dense(rng):
    d = 6
    a = random_adapter(rng, d, 2)
    x, w0 = rng.normal(size=(3, d)), rng.normal(size=(d, d))
    dense = x @ (w0 + a.delta()).T
    assert np.max(np.abs(lora_forward(x, w0, a).data - dense)) < 1e-12


def test_forward_dimension_error(rng):
    a = random_adapter(rng, 6, 2)
    with pytest.raises(DimensionError):
        lora_forward(rng.normal(size=(3, 5)), np.zeros((6, 6)), a)


def test_merge_single_and_zero_weights(rng):
    a = random_adapter(rng, 6, 2)
    assert np.array_equal(merge_adapters([a], [1.0]), a.down.data @ a.up.data)
    b = random_adapter(rng, 6, 1)
    assert np.array_equal(merge_adapters([a, b], [0.0, 0.0]), np.zeros((6, 6)))


def test_merge_rank_bound(rng):
    adapters = [random_adapter(rng, 6, r) for r in (1, 2, 2)]
    merged = merge_adapters(adapters, rng.normal(size=3))
    sv = np.linalg.svd(merged, compute_uv=False)
    assert np.all(sv[5:] < 1e-9)


def test_merge_is_linear_in_weights(rng):
    adapters = [random_adapter(rng, 5, 2) for _ in range(3)]
    u, v = rng.normal(size=3), rng.normal(size=3)
    alpha, beta = 0.7, -1.3
    lhs = merge_adapters(adapters, alpha * u + beta * v)
    rhs = alpha * merge_adapters(adapters, u) + beta * merge_adapters(adapters, v)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_merge_errors(rng):
    with pytest.raises(ContractError):
        merge_adapters([], [])
    with pytest.raises(DimensionError):
        merge_adapters([random_adapter(rng, 5, 2), random_adapter(rng, 6, 2)], [1.0, 1.0])
    with pytest.raises(ContractError):
        merge_adapters([random_adapter(rng, 5, 2)], [1.0, 2.0])
