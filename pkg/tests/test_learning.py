import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from errinject.learning import (
    DEFAULT_HIDDEN,
    DatasetError,
    ErrorDataset,
    MlpModel,
    Normalizer,
    SearchGrid,
    TrainConfig,
    TrainingError,
    build_dataset,
    encode_features,
    grad_check,
    hyperparameter_search,
    init_model,
    loss_and_grads,
    mlp_forward,
    mlp_train,
    split_indices,
)
from errinject.phystwin import StepRecord, generate_trajectory, ideal_twin_config, run_collection

SHIPPED_ARCHITECTURES = [(16, 32), (32, 32), (64,)]


def small_records(dh, n_goals=4, seed=0):
    return run_collection(ideal_twin_config(), generate_trajectory(dh, n_goals, seed=seed), seed)[0]


def random_dataset(rng, n=200, encoding="OC", fn=None):
    X = rng.normal(size=(n, 6 if encoding == "OC" else 12))
    Y = fn(X) if fn else rng.normal(size=(n, 6))
    return ErrorDataset(X, Y, encoding, "NN1")


# --- features and datasets --------------------------------------------------

def test_encodings():
    cur = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    prev = np.array([0.0, 0.3, 0.3, 0.5, 0.4, 0.7])
    np.testing.assert_array_equal(encode_features(cur, prev, "OC"), cur)
    np.testing.assert_array_equal(encode_features(cur, prev, "CP")[6:], prev)
    np.testing.assert_array_equal(encode_features(cur, prev, "CPE")[6:], [1, -1, 1, -1, 1, -1])
    with pytest.raises(ValueError):
        encode_features(cur, prev, "XYZ")


def test_cpe_positive_motion(dh):
    q0 = (dh.lower + dh.upper) / 2
    recs = [StepRecord(k, q0 + 0.01 * k, q0 + 0.01 * k, None, None, q0 + 0.01 * k) for k in range(2)]
    ds = build_dataset(recs, "NN1", "CPE")
    assert len(ds) == 1
    np.testing.assert_array_equal(ds.inputs[0, 6:], np.ones(6))


def test_dataset_encoding_properties(bench):
    M = np.array([r.measured_q for r in bench.records])
    cp = build_dataset(bench.records, "NN2", "CP")
    np.testing.assert_array_equal(cp.inputs[:, 6:], M[:-1])
    cpe = build_dataset(bench.records, "NN2", "CPE")
    assert set(np.unique(cpe.inputs[:, 6:])) <= {-1.0, 1.0}
    oc = build_dataset(bench.records, "NN1", "OC")
    assert len(oc) == len(bench.records) and len(cp) == len(bench.records) - 1


def test_nn2_targets_match_records(bench):
    ds = build_dataset(bench.records, "NN2", "OC")
    A = np.array([r.actual_q for r in bench.records])
    M = np.array([r.measured_q for r in bench.records])
    np.testing.assert_array_equal(ds.targets, A - M)
    # hysteresis minus half the backlash bounds the cable part of A - M
    h = bench.twin.hysteresis_magnitude - bench.twin.backlash_width / 2
    assert np.all(np.abs(ds.targets).mean(axis=0) < 3 * h + 0.01)


def test_zero_error_targets(dh):
    ds = build_dataset(small_records(dh), "NN1", "OC")
    assert np.all(ds.targets == 0)


def test_dataset_errors(dh):
    recs = small_records(dh)
    with pytest.raises(DatasetError, match="ordered"):
        build_dataset(recs[::-1], "NN1", "OC")
    with pytest.raises(DatasetError):
        build_dataset(recs[:1], "NN1", "CP")
    stripped = [StepRecord(r.k, r.setpoint_q, r.measured_q, r.actual_pose, r.tracker_marker) for r in recs]
    with pytest.raises(DatasetError, match="step 0"):
        build_dataset(stripped, "NN2", "OC")
    np.testing.assert_allclose(build_dataset(stripped, "NN2", "OC", dh).targets, 0, atol=1e-6)
    with pytest.raises(DatasetError):
        ErrorDataset(np.zeros((3, 6)), np.zeros((3, 6)), "CP", "NN1")


# --- normalizer -------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (20, 4), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_normalizer_round_trip(x):
    n = Normalizer.fit(x)
    assert np.all(n.std > 0)
    np.testing.assert_allclose(n.denormalize(n.normalize(x)), x, atol=1e-12 * (1 + np.abs(x).max()), rtol=0)


def test_normalizer_statistics(rng):
    x = rng.normal(3.0, 5.0, (500, 6))
    x[:, 2] = 7.0
    n = Normalizer.fit(x)
    z = n.normalize(x)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    np.testing.assert_allclose(np.delete(z.std(axis=0), 2), 1.0, atol=1e-6)
    assert n.std[2] == 1.0 and n.mean[2] == 7.0


# --- model ------------------------------------------------------------------

def test_zero_model_predicts_target_mean():
    tn = Normalizer(np.arange(6.0), np.full(6, 2.0))
    m = init_model([12, 16, 32, 6], np.random.default_rng(0), target_normalizer=tn)
    for W in m.weights:
        W[:] = 0
    np.testing.assert_array_equal(mlp_forward(m, np.ones(12)), np.arange(6.0))


def test_linear_layer_output():
    W = np.eye(6) * 2.0
    b = np.arange(6.0)
    m = MlpModel([6, 6], [W], [b], Normalizer.identity(6), Normalizer.identity(6))
    x = np.array([1.0, -1, 2, 0, 3, 1])
    np.testing.assert_allclose(mlp_forward(m, x), 2 * x + b)
    np.testing.assert_allclose(mlp_forward(m, np.stack([x, x])), np.stack([2 * x + b] * 2))


def test_width_mismatch():
    m = init_model([12, 16, 6], np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward(m, np.zeros(6))


def test_model_shape_validation():
    with pytest.raises(ValueError):
        MlpModel([6, 5], [np.zeros((6, 5))], [np.zeros(5)], Normalizer.identity(6), Normalizer.identity(5))
    with pytest.raises(ValueError):
        MlpModel([6, 6], [np.zeros((5, 6))], [np.zeros(6)], Normalizer.identity(6), Normalizer.identity(6))


@pytest.mark.parametrize("hidden", SHIPPED_ARCHITECTURES)
@pytest.mark.parametrize("width", [6, 12])
def test_grad_check_shipped(hidden, width, rng):
    m = init_model([width, *hidden, 6], rng)
    x, y = rng.normal(size=(8, width)), rng.normal(size=(8, 6))
    assert grad_check(m, x, y) < 1e-4


def test_zero_input_first_layer_gradient(rng):
    m = init_model([12, 16, 32, 6], rng)
    for b in m.biases:
        b[:] = rng.normal(size=b.shape)
    _, gW, _ = loss_and_grads(m.weights, m.biases, np.zeros((5, 12)), rng.normal(size=(5, 6)))
    assert np.all(gW[0] == 0)


def test_linear_gradient_closed_form(rng):
    x, y = rng.normal(size=(10, 6)), rng.normal(size=(10, 6))
    W, b = rng.normal(size=(6, 6)), rng.normal(size=6)
    _, gW, gb = loss_and_grads([W], [b], x, y)
    r = x @ W + b - y
    np.testing.assert_allclose(gW[0], 2 * x.T @ r / r.size, atol=1e-14)
    np.testing.assert_allclose(gb[0], 2 * r.sum(axis=0) / r.size, atol=1e-14)


# --- training ---------------------------------------------------------------

def test_train_config_validation():
    for bad in ({"val_fraction": 0.0}, {"val_fraction": 1.0}, {"batch_size": 0}, {"learning_rate": -1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert (TrainConfig().batch_size, TrainConfig().learning_rate, DEFAULT_HIDDEN) == (32, 0.0064, (16, 32))


def test_split(rng):
    tr, va = split_indices(100, 0.2, rng)
    assert len(va) == 20 and len(set(tr) | set(va)) == 100


def test_constant_target_learned():
    # inputs carry no information, so the network has to absorb the target in its biases
    target = np.array([0.01, -0.02, 0.003, 0.0, 0.5, -1.0])
    x = np.tile(np.linspace(-1, 1, 6), (100, 1))
    ds = ErrorDataset(x, np.tile(target, (100, 1)), "OC", "NN1")
    model, hist = mlp_train(ds, (16, 32), TrainConfig(epochs=200))
    assert hist.best_val < 1e-8
    np.testing.assert_allclose(mlp_forward(model, x[0]), target, atol=1e-10)


def test_linear_map_learned():
    A = np.random.default_rng(0).normal(size=(6, 6))
    X = np.random.default_rng(1).normal(size=(2000, 6))
    _, hist = mlp_train(ErrorDataset(X, X @ A, "OC", "NN1"), (64,), TrainConfig(epochs=300))
    assert hist.best_val < 1e-4
    assert hist.val_mse[0] > 100 * hist.best_val


def test_best_so_far_non_increasing(rng):
    _, hist = mlp_train(random_dataset(rng, 100), (16,), TrainConfig(epochs=30))
    assert np.all(np.diff(hist.best_so_far()) <= 0)
    assert len(hist.train_mse) == len(hist.val_mse) == 30
    assert hist.best_val == min(hist.val_mse)


def test_seeded_determinism(rng):
    ds = random_dataset(rng, 120, "CP")
    a, ha = mlp_train(ds, (16, 32), TrainConfig(epochs=20, seed=3))
    b, hb = mlp_train(ds, (16, 32), TrainConfig(epochs=20, seed=3))
    c, _ = mlp_train(ds, (16, 32), TrainConfig(epochs=20, seed=4))
    assert ha.val_mse == hb.val_mse
    for x, y in zip(a.params, b.params):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_divergence_reported(rng):
    ds = random_dataset(rng, 64)
    with pytest.raises(TrainingError, match="learning rate"):
        mlp_train(ds, (16,), TrainConfig(learning_rate=1e200, epochs=5))


def test_too_small_dataset(rng):
    with pytest.raises(TrainingError):
        mlp_train(random_dataset(rng, 1), (4,), TrainConfig(epochs=1))


def test_model_json_round_trip(rng):
    model, _ = mlp_train(random_dataset(rng, 60, "CPE"), (16, 32), TrainConfig(epochs=3))
    back = MlpModel.from_dict(json.loads(json.dumps(model.to_dict())))
    x = rng.normal(size=(4, 12))
    np.testing.assert_array_equal(mlp_forward(back, x), mlp_forward(model, x))
    assert (back.encoding, back.role, back.layer_sizes) == ("CPE", "NN1", [12, 16, 32, 6])


# --- search -----------------------------------------------------------------

def test_single_cell_search_equals_direct(bench):
    recs = bench.records[:300]
    cfg = TrainConfig(epochs=15, seed=2)
    grid = SearchGrid([32], [0.0064], [[16, 32]], ["CP"])
    (res,) = hyperparameter_search(recs, "NN1", grid, cfg)
    _, hist = mlp_train(build_dataset(recs, "NN1", "CP"), (16, 32), cfg)
    assert res.history.val_mse == hist.val_mse
    assert res.best_val == hist.best_val and res.label == "16-32-CP-bs32-lr0.0064"


def test_search_ranking_deterministic_and_parallel(bench):
    recs = bench.records[:300]
    grid = SearchGrid([16, 32], [0.0064], [[16]], ["OC", "CPE"])
    cfg = TrainConfig(epochs=10)
    a = hyperparameter_search(recs, "NN2", grid, cfg)
    b = hyperparameter_search(recs, "NN2", grid, cfg, workers=2)
    assert [r.label for r in a] == [r.label for r in b]
    assert [r.best_val for r in a] == [r.best_val for r in b]
    assert all(x.best_val <= y.best_val for x, y in zip(a, a[1:]))


def test_search_records_cell_failures(bench):
    grid = SearchGrid([32], [1e200, 0.0064], [[16]], ["OC"])
    res = hyperparameter_search(bench.records[:100], "NN1", grid, TrainConfig(epochs=3))
    assert res[0].error is None and res[-1].error is not None
    with pytest.raises(ValueError):
        hyperparameter_search(bench.records[:100], "NN1", SearchGrid([], [1.0], [[4]], ["OC"]))
