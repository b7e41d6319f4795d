import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from orchmoe import MultiAdapterRegressor
from orchmoe.data import generate_suite
from orchmoe.errors import ContractError


@pytest.fixture(scope="module")
def suite():
    return generate_suite(3, 3, 8, 4, 6, 0.0, seed=2)


def est(**kw):
    args = dict(base_weights=None, n_skills=2, rank=2, epochs=2, batch_size=4)
    args.update(kw)
    return MultiAdapterRegressor(**args)


def test_get_params_and_clone(suite):
    e = est(base_weights=suite.base_weights, architecture="shared")
    params = e.get_params()
    assert params["architecture"] == "shared" and params["n_skills"] == 2
    c = clone(e)
    assert c.get_params()["rank"] == 2 and not hasattr(c, "model_")
    e.set_params(rank=3)
    assert e.rank == 3


def test_not_fitted(suite):
    with pytest.raises(NotFittedError):
        est(base_weights=suite.base_weights).predict(suite.eval_x[0])


@pytest.mark.parametrize("arch", ["orchmoe", "lora", "moe-lora-topk", "task-id", "shared"])
def test_fit_predict_shapes(suite, arch):
    x, y, ids = suite.flat("train")
    e = est(base_weights=suite.base_weights, architecture=arch).fit(x, y, ids)
    pred = e.predict(suite.eval_x[0], np.zeros(4, dtype=int) if arch == "task-id" else None)
    assert pred.shape == suite.eval_x[0].shape
    assert len(e.history_["train_loss"]) == 2
    assert e.step_ == 2 * 6
    assert np.isfinite(e.score(x, y, task_ids=ids))


def test_fit_is_deterministic(suite):
    x, y, ids = suite.flat("train")
    a = est(base_weights=suite.base_weights).fit(x, y, ids).predict(x)
    b = est(base_weights=suite.base_weights).fit(x, y, ids).predict(x)
    assert a.tobytes() == b.tobytes()


def test_input_validation(suite):
    x, y, _ = suite.flat("train")
    with pytest.raises(ValueError):
        est(base_weights=suite.base_weights).fit(x[:, 0], y[:, 0])
    bad = x.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        est(base_weights=suite.base_weights).fit(bad, y)
    with pytest.raises(ContractError):
        est(base_weights=None).fit(x, y)
    with pytest.raises(ContractError):
        est(base_weights=suite.base_weights, architecture="nope").fit(x, y)


def test_routing_summary_only_for_orchmoe(suite):
    x, y, ids = suite.flat("train")
    e = est(base_weights=suite.base_weights).fit(x, y)
    r = e.routing_summary(x[:5])
    assert r[0]["gates"].shape == (5, 2) and r[0]["allocation"].shape == (1, 2)
    with pytest.raises(ContractError):
        est(base_weights=suite.base_weights, architecture="lora").fit(x, y).routing_summary(x)
