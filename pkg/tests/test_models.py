import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feederlab.domain import N_FEATURES, TimeGrid
from feederlab.models import (
    BoostedTreesParams,
    DataError,
    DivergenceError,
    InsufficientData,
    LinearModel,
    ShapeError,
    TrainConfig,
    gbt_fit_round,
    load_model,
    mlp_forward_backward,
    save_model,
    train,
)
from feederlab.models.base import LinearParams, split_validation
from feederlab.models.linear import fit_linear
from feederlab.models.neural import forward, init_params
from feederlab.models.trees import fit_boosted_trees
from feederlab.prep import SampleTable


def make_table(rng, n_feeders=6, rows=80, target=None):
    n = n_feeders * rows
    X = rng.normal(size=(n, N_FEATURES))
    y = target(X) if target else X[:, 0] * 3 + np.sin(X[:, 1] * 2) * 4 + rng.normal(0, 0.1, n)
    fids = np.repeat([f"F{k:02d}" for k in range(n_feeders)], rows)
    index = np.tile(np.arange(rows), n_feeders)
    return SampleTable(TimeGrid(dt.datetime(2024, 1, 1), rows), fids, index, X, y)


FAST = {
    "neural": {"max_epochs": 3, "check_every": 5, "batch_size": 32},
    "boosted_trees": {"n_estimators": 40, "max_depth": 3},
    "linear": {},
}


# --- neural network ---------------------------------------------------------

def finite_difference(params, X, y, h=1e-6):
    out = {}
    for name, value in params.items():
        g = np.zeros_like(value, dtype=float)
        flat = g.reshape(-1)
        for k in range(value.size):
            plus = {n: v.copy() for n, v in params.items()}
            minus = {n: v.copy() for n, v in params.items()}
            plus[name].reshape(-1)[k] += h
            minus[name].reshape(-1)[k] -= h
            flat[k] = (mlp_forward_backward(plus, X, y)[2] - mlp_forward_backward(minus, X, y)[2]) / (2 * h)
        out[name] = g
    return out


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("draw", range(10))
def test_gradient_matches_finite_differences(draw):
    rng = np.random.default_rng(draw)
    params = {k: np.asarray(v) for k, v in init_params(N_FEATURES, 20, rng).items()}
    X = rng.random((16, N_FEATURES))
    y = rng.random(16)
    _, grads, _ = mlp_forward_backward(params, X, y)
    fd = finite_difference(params, X, y)
    for name in params:
        assert rel_error(grads[name], fd[name]) < 1e-5, name


def test_zero_network():
    params = {"W1": np.zeros((N_FEATURES, 20)), "b1": np.zeros(20), "W2": np.zeros(20), "b2": np.asarray(0.0)}
    X = np.random.default_rng(0).random((5, N_FEATURES))
    pred, grads, _ = mlp_forward_backward(params, X, np.ones(5))
    assert np.all(pred == 0)
    assert np.all(grads["W1"] == 0) and np.all(grads["b1"] == 0)


def test_descent_step_reduces_sample_loss(rng):
    params = {k: np.asarray(v) for k, v in init_params(N_FEATURES, 20, rng).items()}
    x, y = rng.random((1, N_FEATURES)), np.array([0.7])
    _, grads, loss = mlp_forward_backward(params, x, y)
    stepped = {k: params[k] - 1e-3 * grads[k] for k in params}
    assert mlp_forward_backward(stepped, x, y)[2] < loss


def test_divergence_error():
    params = {"W1": np.zeros((N_FEATURES, 20)), "b1": np.ones(20), "W2": np.full(20, 1e308), "b2": np.asarray(0.0)}
    with pytest.raises(DivergenceError), np.errstate(over="ignore"):
        mlp_forward_backward(params, np.zeros((2, N_FEATURES)), np.zeros(2))


def test_empty_batch():
    params = init_params(N_FEATURES, 20, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward_backward(params, np.zeros((0, N_FEATURES)), np.zeros(0))


def test_neural_output_in_original_units(rng):
    table = make_table(rng, target=lambda X: 500 + 100 * np.tanh(X[:, 0]))
    model = train(table, TrainConfig("neural", seed=1, hyperparameters=FAST["neural"]))
    pred = model.predict(table.X)
    assert 350 < pred.mean() < 650
    # scaling statistics come from the fitting feeders only
    val = set(model.validation_feeders)
    fit_rows = ~np.isin(table.feeder_ids, list(val))
    assert model.y_scaler.low[0] == table.y[fit_rows].min()


# --- linear -----------------------------------------------------------------

def test_planted_coefficients(rng):
    table = make_table(rng, target=lambda X: 2 * X[:, 0] + 3)
    model = train(table, TrainConfig("linear", hyperparameters={"penalty_strength": 0.0, "tol": 1e-12}))
    expected = np.zeros(N_FEATURES)
    expected[0] = 2.0
    assert np.max(np.abs(model.weights - expected)) < 1e-6
    assert abs(model.intercept - 3.0) < 1e-6


def test_planted_coefficients_match_least_squares(rng):
    X = rng.normal(size=(400, N_FEATURES))
    w = rng.normal(size=N_FEATURES)
    y = X @ w - 1.5 + rng.normal(0, 0.5, 400)
    model = fit_linear(X, y, LinearParams(penalty_strength=0.0, tol=1e-12))
    A = np.column_stack([X, np.ones(len(X))])
    sol = np.linalg.lstsq(A, y, rcond=None)[0]
    assert np.max(np.abs(model.weights - sol[:-1])) < 1e-6
    assert abs(model.intercept - sol[-1]) < 1e-6


def test_constant_target(rng):
    table = make_table(rng, target=lambda X: np.full(len(X), 42.0))
    model = train(table, TrainConfig("linear", hyperparameters={"penalty_strength": 0.0}))
    assert np.sqrt(np.mean((model.predict(table.X) - 42.0) ** 2)) < 1e-6


def test_known_weights_predict_exactly(rng):
    w = rng.normal(size=N_FEATURES)
    X = rng.normal(size=(7, N_FEATURES))
    assert np.array_equal(LinearModel(w, 1.25).predict(X), X @ w + 1.25)


def test_elastic_net_shrinks(rng):
    table = make_table(rng)
    free = train(table, TrainConfig("linear", hyperparameters={"penalty_strength": 0.0}))
    penalised = train(table, TrainConfig("linear"))
    assert np.abs(penalised.weights).sum() < np.abs(free.weights).sum()
    assert (penalised.weights == 0).sum() > 0


# --- boosted trees ------------------------------------------------------------

def test_four_row_depth_one_exact_fit():
    X = np.array([[0.0, 5.0], [0.0, 3.0], [1.0, 5.0], [1.0, 3.0]])
    r = np.array([-2.0, -2.0, 6.0, 6.0])
    params = BoostedTreesParams(subsample=1.0, colsample_bylevel=1.0, max_depth=3)
    tree, leaves = gbt_fit_round(r, X, np.random.default_rng(0), params)
    assert tree.depth == 1 and tree.feature[0] == 0 and tree.threshold[0] == 0.5
    assert np.array_equal(tree.predict(X), r)


def test_constant_residuals_single_leaf():
    X = np.random.default_rng(0).normal(size=(20, 3))
    tree, _ = gbt_fit_round(np.full(20, 1.5), X, np.random.default_rng(0))
    assert tree.n_nodes == 1 and tree.value[0] == 1.5


def test_colsample_picks_next_best_split():
    # feature 0 splits perfectly, feature 1 misplaces one row, 2 and 3 are constant
    X = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [0, 0, 1, 1], [0, 1, 1, 1],
                  [1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 1, 1]], dtype=float)
    r = np.array([0, 0, 0, 0, 10, 10, 10, 10], dtype=float)
    params = BoostedTreesParams(subsample=1.0, colsample_bylevel=0.5, max_depth=1)

    def first_level_draw(seed):
        g = np.random.default_rng(seed)
        g.random(len(r))
        return set(g.choice(4, size=2, replace=False).tolist())

    with_0 = next(s for s in range(100) if 0 in first_level_draw(s))
    without_0 = next(s for s in range(100) if first_level_draw(s) & {0, 1} == {1})
    assert gbt_fit_round(r, X, np.random.default_rng(with_0), params)[0].feature[0] == 0
    tree = gbt_fit_round(r, X, np.random.default_rng(without_0), params)[0]
    assert tree.feature[0] == 1 and tree.threshold[0] == 0.5


def test_depth_zero_single_tree(rng):
    X = rng.normal(size=(30, N_FEATURES))
    y = rng.normal(5, 2, 30)
    params = BoostedTreesParams(n_estimators=1, max_depth=0, base_score=0.0)
    model = fit_boosted_trees(X, y, params, np.random.default_rng(0))
    assert np.allclose(model.predict(X), 0.05 * y.mean(), rtol=0, atol=1e-12)


def test_training_loss_monotone(rng):
    table = make_table(rng)
    model = train(table, TrainConfig("boosted_trees", seed=3, hyperparameters={"n_estimators": 60, "max_depth": 4,
                                                                           "early_stopping_rounds": 1000}))
    losses = [e["train_loss"] for e in model.training_log]
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_early_stopping_within_patience(rng):
    # targets are pure noise, so validation loss plateaus almost at once
    table = make_table(rng, target=lambda X: np.random.default_rng(5).normal(size=len(X)))
    model = train(table, TrainConfig("boosted_trees", seed=0, hyperparameters={"n_estimators": 500, "max_depth": 3}))
    log = model.training_log
    last = log[-1]["round"]
    assert last < 500
    assert last <= model.best_round + 30
    assert len(model.trees) == model.best_round
    best = min(e["val_loss"] for e in log[1:])
    assert log[model.best_round]["val_loss"] == best <= log[-1]["val_loss"]


def test_validation_split_feeder_disjoint():
    ids = [f"F{k}" for k in range(16)]
    fit, val = split_validation(ids, 0.125, np.random.default_rng(0))
    assert len(val) == 2 and not set(fit) & set(val) and set(fit) | set(val) == set(ids)
    with pytest.raises(InsufficientData):
        split_validation(["A"], 0.125, np.random.default_rng(0))


# --- shared contract --------------------------------------------------------

@pytest.fixture(scope="module")
def trained():
    table = make_table(np.random.default_rng(7))
    return table, {kind: train(table, TrainConfig(kind, seed=2, hyperparameters=FAST[kind])) for kind in FAST}


@pytest.mark.parametrize("kind", list(FAST))
def test_determinism(trained, kind):
    table, models = trained
    again = train(table, TrainConfig(kind, seed=2, hyperparameters=FAST[kind]))
    assert np.array_equal(again.predict(table.X), models[kind].predict(table.X))


@pytest.mark.parametrize("kind", list(FAST))
def test_permutation_invariance(trained, kind):
    table, models = trained
    perm = np.random.default_rng(0).permutation(len(table))
    model = models[kind]
    assert np.array_equal(model.predict(table.X[perm]), model.predict(table.X)[perm])


@pytest.mark.parametrize("kind", list(FAST))
def test_save_load_roundtrip(trained, kind, tmp_path):
    table, models = trained
    path = tmp_path / f"{kind}.npz"
    save_model(models[kind], path)
    loaded = load_model(path)
    assert loaded.kind == kind
    assert loaded.config.digest() == models[kind].config.digest()
    assert np.array_equal(loaded.predict(table.X), models[kind].predict(table.X))


@pytest.mark.parametrize("kind", list(FAST))
def test_shape_error(trained, kind):
    with pytest.raises(ShapeError):
        trained[1][kind].predict(np.zeros((3, N_FEATURES - 1)))


def test_accepts_feature_rows(trained):
    table, models = trained
    rows = [s.features for s in list(table.rows())[:5]]
    assert np.array_equal(models["linear"].predict(rows), models["linear"].predict(table.X[:5]))


def test_insufficient_data(rng):
    table = make_table(rng, n_feeders=1)
    with pytest.raises(InsufficientData):
        train(table, TrainConfig("linear"))


def test_non_finite_feature(rng):
    table = make_table(rng)
    table.X[3, 4] = np.nan
    with pytest.raises(DataError):
        train(table, TrainConfig("boosted_trees"))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig("forest")
    with pytest.raises(ValueError):
        TrainConfig("linear", validation_fraction=0.5)
    with pytest.raises(ValueError):
        TrainConfig("neural", hyperparameters={"depth": 3})
    with pytest.raises(ValueError):
        TrainConfig("boosted_trees", hyperparameters={"n_estimators": 0}).params


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=4, max_size=40), st.integers(0, 2**31))
def test_round_never_increases_loss(values, seed):
    y = np.array(values)
    g = np.random.default_rng(seed)
    X = g.integers(0, 4, size=(len(y), 3)).astype(float)
    tree, leaves = gbt_fit_round(y, X, g, BoostedTreesParams(max_depth=3))
    for lr in (0.05, 1.0):
        assert np.mean((y - lr * tree.value[leaves]) ** 2) <= np.mean(y**2) + 1e-9
    assert np.array_equal(tree.predict(X), tree.value[leaves])


def test_forward_shapes(rng):
    params = init_params(N_FEATURES, 20, rng)
    pred, hidden = forward(params, rng.random((4, N_FEATURES)))
    assert pred.shape == (4,) and hidden.shape == (4, 20)
