import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orchmoe import autodiff as ad
from orchmoe.autodiff import Tensor
from orchmoe.errors import ContractError
from orchmoe.skill_router import (

    CounterRNG,
    SkillAllocation,
    eval_allocation,
    gumbel_sigmoid,
    hard_allocation,
    relaxed_bernoulli,
    sample_allocation,
)


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def alloc(logits):
    return SkillAllocation(Tensor(np.asarray(logits, dtype=float), requires_grad=True))


@pytest.mark.parametrize("w", [-8.0, -1.0, 0.0, 0.3, 5.0])
def test_median_noise_gives_sigmoid(w):
    assert abs(gumbel_sigmoid(w, 0.5) - sig(w)) < 1e-15


def test_zero_logit_median():
    assert gumbel_sigmoid(0.0, 0.5) == 0.5


def test_identity_on_random_pairs(rng):
    w = rng.uniform(-10, 10, 1000)
    u = rng.uniform(0.001, 0.999, 1000)
    for wi, ui in zip(w, u):
        assert abs(gumbel_sigmoid(wi, ui) - sig(wi + math.log(ui / (1 - ui)))) < 1e-12


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
def test_rejects_u_outside_open_interval(u):
    with pytest.raises(ContractError):
        gumbel_sigmoid(0.0, u)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0.001, 0.998), st.floats(1e-3, 1.0))
def test_monotone_in_w_and_u(w, u, step):
    assert gumbel_sigmoid(w + step, u) > gumbel_sigmoid(w, u)
    assert gumbel_sigmoid(w, min(u + step * 1e-3, 0.999)) > gumbel_sigmoid(w, u)


def test_derivative_matches_finite_differences(rng):
    u = rng.uniform(0.01, 0.99, size=(4, 3))
    w0 = rng.uniform(-5, 5, size=(4, 3))
    w = Tensor(w0.copy(), requires_grad=True)
    ad.backward(ad.tsum(relaxed_bernoulli(w, u)))
    fd = ad.finite_diff_grad(lambda v: relaxed_bernoulli(v, u).data.sum(), w0)
    assert ad.max_relative_error(w.grad, fd) < 1e-4


def test_saturated_logits():
    s = sample_allocation(alloc(np.full((3, 4), 20.0)), CounterRNG(0), 0, 0).data
    assert np.all(s > 0.999)


def test_sampling_is_deterministic_and_keyed():
    a = alloc(np.zeros((3, 4)))
    rng = CounterRNG(11)
    s1 = sample_allocation(a, rng, 0, 5).data
    s2 = sample_allocation(a, CounterRNG(11), 0, 5).data
    s3 = sample_allocation(a, rng, 0, 6).data
    assert s1.tobytes() == s2.tobytes()
    assert not np.array_equal(s1, s3)


def test_samples_strictly_inside_unit_interval():
    s = sample_allocation(alloc(np.zeros((50, 50))), CounterRNG(3), 1, 2).data
    assert np.all((s > 0) & (s < 1))


def test_zero_logit_half_above_half():
    a = alloc(np.zeros((2, 2)))
    draws = np.stack([sample_allocation(a, CounterRNG(4), 0, k).data for k in range(10_000)])
    frac = (draws > 0.5).mean(axis=0)
    assert np.all(np.abs(frac - 0.5) < 0.02)


def test_gradient_reaches_logits():
    a = alloc(np.zeros((2, 3)))
    ad.backward(ad.tsum(sample_allocation(a, CounterRNG(0), 0, 0)))
    assert a.logits.grad is not None and np.all(a.logits.grad > 0)


def test_eval_allocation(rng):
    assert np.array_equal(eval_allocation(alloc(np.zeros((2, 3)))).data, np.full((2, 3), 0.5))
    w = rng.normal(size=(3, 2)) * 3
    ev = eval_allocation(alloc(w)).data
    for (i, j), v in np.ndenumerate(w):
        assert abs(ev[i, j] - gumbel_sigmoid(v, 0.5)) < 1e-15


def test_eval_allocation_is_sample_median():
    w = np.array([[-1.5, 0.0, 2.0]])
    a = alloc(w)
    draws = np.stack([sample_allocation(a, CounterRNG(8), 0, k).data for k in range(10_001)])
    med = np.median(draws, axis=0)
    assert np.all(np.abs(med - eval_allocation(a).data) < 0.02)


def test_hard_allocation_threshold():
    assert hard_allocation(alloc([[-1.0, 0.5, 3.0]])).tolist() == [[0.0, 1.0, 1.0]]
