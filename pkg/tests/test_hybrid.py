import math

import numpy as np
import pytest

import lcuqml.hybrid as hy
from lcuqml.circuits import QuantumLayerSpec, Variant
from lcuqml.data import synthetic_blobs
from lcuqml.errors import ConfigError, NumericalError
from lcuqml.hybrid import (
    AdamState,
    Dataset,
    EarlyStopping,
    TrainConfig,
    adam_step,
    forward,
    init_model,
    load_checkpoint,
    loss_and_grad,
    loss_value,
    save_checkpoint,
    train,
    xavier_bound,
)


def small_model(variant=Variant.LCU, n=3, seed=0, input_dim=5, n_out=3):
    spec = None if variant is None else QuantumLayerSpec(variant, n)
    return init_model(input_dim, n_out, spec, seed, n_qubits=n, extractor_hidden=(6,), head_hidden=7)


class TestInit:
    def test_xavier_bound(self):
        assert xavier_bound(4, 4) == pytest.approx(0.8660254, abs=1e-6)
        m = init_model(4, 4, None, 3, n_qubits=4, extractor_hidden=(), head_hidden=4)
        assert np.abs(m.extractor[0].weights).max() <= xavier_bound(4, 4)
        assert np.all(m.extractor[0].bias == 0)

    def test_all_layers_within_bound(self):
        m = small_model()
        for layer in m.extractor + m.head:
            n_out, n_in = layer.weights.shape
            assert np.abs(layer.weights).max() <= xavier_bound(n_in, n_out)

    def test_same_seed_same_model(self):
        a, b = small_model(seed=5), small_model(seed=5)
        for k, v in a.parameters().items():
            np.testing.assert_array_equal(v, b.parameters()[k])
        assert not np.array_equal(a.quantum_params, small_model(seed=6).quantum_params)

    def test_quantum_angles_uniform(self):
        spec = QuantumLayerSpec(Variant.NOLCU, 25)
        draws = np.concatenate([init_model(2, 2, spec, s, extractor_hidden=(), head_hidden=2).quantum_params for s in range(100)])
        assert draws.size == 10_000
        assert draws.min() >= 0 and draws.max() <= 2 * np.pi
        sigma = 2 * np.pi / math.sqrt(12) / math.sqrt(draws.size)
        assert abs(draws.mean() - np.pi) < 3 * sigma

    def test_extractor_width_follows_layer(self):
        m = small_model(Variant.IQP_EMBEDDING, n=2)
        assert m.extractor[-1].weights.shape[0] == 3
        assert m.head[0].weights.shape[1] == 2

    def test_lcu_and_nolcu_share_parameter_count(self):
        assert small_model(Variant.LCU).n_trainable() == small_model(Variant.NOLCU).n_trainable()


class TestForward:
    def test_zero_head_gives_bias(self):
        m = small_model()
        m.head[-1].weights[:] = 0
        m.head[-1].bias[:] = [0.5, -1.0, 2.0]
        out = forward(m, np.random.default_rng(0).normal(size=(4, 5))).outputs
        np.testing.assert_array_equal(out, np.tile([0.5, -1.0, 2.0], (4, 1)))

    def test_identity_w_matches_unitary_model(self):
        # at N = 2 the zero-angle ansatz is CNOT^4 = I
        lcu, nolcu = small_model(Variant.LCU, 2, seed=1), small_model(Variant.NOLCU, 2, seed=1)
        lcu.quantum_params[:] = 0
        nolcu.quantum_params[:] = 0
        x = np.random.default_rng(1).normal(size=(6, 5))
        np.testing.assert_allclose(forward(lcu, x).outputs, forward(nolcu, x).outputs, atol=1e-12)

    def test_success_prob_reported(self):
        res = forward(small_model(), np.random.default_rng(2).normal(size=(3, 5)))
        assert res.success_prob.shape == (3,)
        assert np.all((res.success_prob > 0) & (res.success_prob <= 1 + 1e-12))
        assert forward(small_model(None), np.zeros((1, 5))).success_prob is None


class TestLoss:
    def test_uniform_logits(self):
        loss, _ = loss_value(np.zeros((4, 5)), np.array([0, 1, 2, 3]), "cross_entropy")
        assert loss == pytest.approx(math.log(5), abs=1e-14)

    def test_confident_correct(self):
        loss, _ = loss_value(np.array([[100.0, 0.0], [0.0, 100.0]]), np.array([0, 1]), "cross_entropy")
        assert 0 <= loss < 1e-12

    def test_clamp_floor(self):
        loss, grad = loss_value(np.array([[0.0, 1000.0]]), np.array([0]), "cross_entropy")
        assert loss == pytest.approx(-math.log(1e-12))
        assert np.all(grad == 0)

    def test_mse(self):
        loss, grad = loss_value(np.array([[1.0], [3.0]]), np.array([0.0, 1.0]), "mse")
        assert loss == pytest.approx(2.5)
        np.testing.assert_allclose(grad, [[1.0], [2.0]])

    def test_nan_raises(self):
        m = small_model()
        m.head[-1].bias[:] = np.nan
        with pytest.raises(NumericalError):
            loss_and_grad(m, np.zeros((2, 5)), np.array([0, 1]))


def _fd_check(model, x, y, loss_kind, n_samples=5, step=1e-6, seed=0):
    rng = np.random.default_rng(seed)
    _, grads, _ = loss_and_grad(model, x, y, loss_kind)
    worst = 0.0
    params = model.parameters()
    for name, arr in params.items():
        flat = arr.reshape(-1)
        for i in rng.choice(flat.size, size=min(n_samples, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + step
            up, _, _ = loss_and_grad(model, x, y, loss_kind)
            flat[i] = old - step
            down, _, _ = loss_and_grad(model, x, y, loss_kind)
            flat[i] = old
            worst = max(worst, abs((up - down) / (2 * step) - grads[name].reshape(-1)[i]))
    return worst


class TestEndToEndGradient:
    @pytest.mark.parametrize("variant", [Variant.LCU, Variant.NOLCU, Variant.IQP_LAYER, Variant.IQP_EMBEDDING, None])
    def test_against_finite_differences(self, variant):
        m = small_model(variant, n=3)
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(6, 5)), rng.integers(0, 3, 6)
        assert _fd_check(m, x, y, "cross_entropy") < 1e-4

    def test_regression_head(self):
        m = small_model(Variant.LCU, n=2, n_out=1)
        rng = np.random.default_rng(4)
        assert _fd_check(m, rng.normal(size=(5, 5)), rng.normal(size=5), "mse") < 1e-4


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = {"w": np.array([1.0, -2.0])}
        out = adam_step(AdamState(), p, {"w": np.zeros(2)}, TrainConfig())
        np.testing.assert_array_equal(out["w"], p["w"])

    def test_first_step_is_lr_times_sign(self):
        out = adam_step(AdamState(), {"w": np.array([0.0, 0.0])}, {"w": np.array([3.0, -0.2])}, TrainConfig(learning_rate=0.01))
        np.testing.assert_allclose(out["w"], [-0.01, 0.01], rtol=1e-6)

    def test_quadratic_converges(self):
        cfg = TrainConfig(learning_rate=0.1)
        state, p = AdamState(), {"x": np.array([1.0])}
        for _ in range(200):
            p = adam_step(state, p, {"x": 2 * p["x"]}, cfg)
        assert abs(p["x"][0]) < 0.05


class TestEarlyStopping:
    def test_patience_zero(self):
        es = EarlyStopping(0, "max")
        assert not es.update(0.9, 0)
        assert es.update(0.8, 1)
        assert es.best_epoch == 0

    def test_patience_counts_idle_epochs(self):
        es = EarlyStopping(2, "min")
        stops = [es.update(v, i) for i, v in enumerate([1.0, 0.5, 0.6, 0.7, 0.8])]
        assert stops == [False, False, False, False, True]

    def test_train_stops_after_second_evaluation(self, monkeypatch):
        scores = iter([90.0, 80.0, 70.0, 60.0])

        def fake_eval(model, data, loss_kind, *a, **k):
            acc = next(scores)
            return {"loss": 1.0, "accuracy": acc, "metric": acc, "mean_success_prob": None}

        monkeypatch.setattr(hy, "evaluate", fake_eval)
        data = synthetic_blobs(2, 5, 20, 0)
        _, hist = train(small_model(None, n_out=2), data, data, TrainConfig(patience=0, max_epochs=10))
        assert len(hist["epochs"]) == 2
        assert hist["best_epoch"] == 0


class TestTrain:
    def test_empty_sets_rejected(self):
        data = synthetic_blobs(2, 5, 10, 0)
        with pytest.raises(ConfigError):
            train(small_model(None, n_out=2), data, data.subset(np.arange(0)), TrainConfig())

    def test_separable_blobs(self):
        train_set = synthetic_blobs(2, 5, 300, 1, spread=0.3)
        val_set = synthetic_blobs(2, 5, 100, 2, spread=0.3)
        model = init_model(5, 2, None, 0, n_qubits=4)
        best, hist = train(model, train_set, val_set, TrainConfig(max_epochs=30, learning_rate=0.01))
        assert hist["best_val"] >= 99.0

    def test_deterministic_history(self):
        data = synthetic_blobs(2, 5, 64, 3)
        cfg = TrainConfig(max_epochs=3, seed=11)
        m = small_model(Variant.LCU, n=2, n_out=2)
        best_a, a = train(m, data, data, cfg)
        best_b, b = train(m, data, data, cfg)
        assert a == b
        for k, v in best_a.parameters().items():
            np.testing.assert_array_equal(v, best_b.parameters()[k])

    def test_training_does_not_mutate_input(self):
        data = synthetic_blobs(2, 5, 32, 4)
        m = small_model(Variant.NOLCU, n=2, n_out=2)
        before = {k: v.copy() for k, v in m.parameters().items()}
        train(m, data, data, TrainConfig(max_epochs=1))
        for k, v in m.parameters().items():
            np.testing.assert_array_equal(v, before[k])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = small_model(Variant.IQP_LAYER)
        init = small_model(Variant.IQP_LAYER, seed=9)
        path = tmp_path / "ck.json"
        save_checkpoint(path, m, seed=3, epoch=7, initial=init, extra={"note": 1})
        doc = load_checkpoint(path)
        assert doc["seed"] == 3 and doc["epoch"] == 7 and doc["extra"] == {"note": 1}
        x = np.random.default_rng(0).normal(size=(3, 5))
        np.testing.assert_array_equal(forward(doc["model"], x).outputs, forward(m, x).outputs)
        np.testing.assert_array_equal(doc["initial_model"].quantum_params, init.quantum_params)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            load_checkpoint(path)


def test_dataset_length_mismatch():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
