import numpy as np
import pytest

from cefl.errors import ConfigurationError, InputError
from cefl.model import (
    AdamState,
    Batch,
    ClientState,
    LayerSpec,
    ModelParams,
    TrainConfig,
    adam_step,
    evaluate,
    forward,
    init_model,
    loss_and_grads,
    train_episodes,
)

SPECS = (LayerSpec(4, 3, "relu"), LayerSpec(3, 2, "softmax"))


def small_batch(seed=0, n=6, dim=4, classes=2):
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(n, dim)), rng.integers(0, classes, size=n))


def make_client(specs=SPECS, seed=0, n=40, sep=False):
    rng = np.random.default_rng(seed)
    dim = specs[0].input_dim
    if sep:
        # linearly separable two blobs along the first axis
        half = n // 2
        x = rng.normal(scale=0.3, size=(n, dim))
        x[:half, 0] += 3.0
        x[half:, 0] -= 3.0
        y = np.array([0] * half + [1] * (n - half))
    else:
        x = rng.normal(size=(n, dim))
        y = rng.integers(0, specs[-1].output_dim, size=n)
    return ClientState(
        client_id=0,
        train=Batch(x, y),
        test=Batch(x.copy(), y.copy()),
        model=init_model(specs, seed),
        adam=AdamState.zeros(init_model(specs, seed).n_params),
        rng=np.random.default_rng(seed + 1),
    )


class TestInit:
    def test_same_seed_identical(self):
        a = init_model(SPECS, 7)
        b = init_model(SPECS, 7)
        assert np.array_equal(a.theta, b.theta)

    def test_broken_chain_rejected(self):
        with pytest.raises(ConfigurationError):
            init_model([LayerSpec(4, 3), LayerSpec(5, 2)], 0)

    def test_different_seeds_differ(self):
        a = init_model(SPECS, 7)
        b = init_model(SPECS, 8)
        # oracle: elementwise inequality scan
        assert np.any(a.theta != b.theta)

    def test_biases_zero_weights_bounded(self):
        m = init_model(SPECS, 3)
        for l, s in enumerate(SPECS):
            assert np.all(m.bias(l) == 0.0)
            limit = np.sqrt(6.0 / (s.input_dim + s.output_dim))
            assert np.all(np.abs(m.weights(l)) <= limit)

    def test_softmax_only_final(self):
        with pytest.raises(ConfigurationError):
            init_model([LayerSpec(4, 3, "softmax"), LayerSpec(3, 2, "softmax")], 0)

    def test_flat_layer_roundtrip(self):
        m = init_model(SPECS, 5)
        flat = m.flat_layer(0)
        assert flat.shape == (SPECS[0].block_length,)
        w = flat[: 3 * 4].reshape(3, 4)
        b = flat[3 * 4 :]
        assert np.array_equal(w, m.weights(0))
        assert np.array_equal(b, m.bias(0))
        m2 = m.copy()
        m2.set_flat_layer(0, flat)
        assert np.array_equal(m2.theta, m.theta)

    def test_checkpoint_roundtrip(self, tmp_path):
        m = init_model(SPECS, 11)
        path = tmp_path / "model.json"
        m.save(path)
        m2 = ModelParams.load(path)
        assert m2.specs == m.specs
        assert np.array_equal(m2.theta, m.theta)


class TestForward:
    def test_zero_model_uniform(self):
        m = init_model([LayerSpec(5, 8, "softmax")], 0)
        m.theta[:] = 0.0
        out = forward(m, np.zeros(5))
        assert np.allclose(out, 0.125, atol=1e-12)

    def test_sums_to_one(self):
        m = init_model(SPECS, 1)
        rng = np.random.default_rng(2)
        for _ in range(20):
            out = forward(m, rng.normal(size=4))
            assert abs(out.sum() - 1.0) < 1e-9
            assert np.all(out > 0)

    def test_identity_bias_closed_form(self):
        m = init_model([LayerSpec(1, 2, "identity")], 0)
        m.theta[:] = 0.0
        m.bias(0)[:] = [np.log(2.0), 0.0]
        out = forward(m, np.zeros(1))
        assert np.allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_dimension_mismatch(self):
        m = init_model(SPECS, 0)
        with pytest.raises(InputError):
            forward(m, np.zeros(5))


class TestLossAndGrads:
    def test_uniform_model_loss_ln8(self):
        m = init_model([LayerSpec(5, 8, "softmax")], 0)
        m.theta[:] = 0.0
        b = Batch(np.random.default_rng(0).normal(size=(10, 5)),
                  np.arange(10) % 8)
        loss, _ = loss_and_grads(m, b)
        assert abs(loss - np.log(8.0)) < 1e-12

    def test_empty_batch(self):
        m = init_model(SPECS, 0)
        with pytest.raises(InputError):
            loss_and_grads(m, Batch.empty(4))

    def test_grads_match_finite_differences(self):
        # central finite differences, h=1e-5, as the independent oracle
        m = init_model(SPECS, 3)
        b = small_batch(4)
        _, grads = loss_and_grads(m, b)
        h = 1e-5
        for idx in range(m.n_params):
            theta = m.theta.copy()
            theta[idx] += h
            lp, _ = loss_and_grads(ModelParams(SPECS, theta), b)
            theta[idx] -= 2 * h
            lm, _ = loss_and_grads(ModelParams(SPECS, theta), b)
            fd = (lp - lm) / (2 * h)
            scale = max(abs(fd), abs(grads.theta[idx]), 1e-8)
            assert abs(fd - grads.theta[idx]) / scale < 1e-4, idx

    def test_duplicated_batch_invariant(self):
        m = init_model(SPECS, 6)
        b = small_batch(5)
        loss1, g1 = loss_and_grads(m, b)
        doubled = Batch(np.vstack([b.x, b.x]), np.concatenate([b.y, b.y]))
        loss2, g2 = loss_and_grads(m, doubled)
        assert abs(loss1 - loss2) < 1e-12
        assert np.allclose(g1.theta, g2.theta, atol=1e-12)


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        m = init_model(SPECS, 0)
        before = m.theta.copy()
        zero = ModelParams(SPECS, np.zeros(m.n_params))
        adam_step(m, zero, AdamState.zeros(m.n_params), TrainConfig())
        assert np.array_equal(before, m.theta)

    def test_first_step_magnitude_is_lr(self):
        # hand-computed: bias-corrected first step with g=1 moves by
        # lr * 1 / (1 + eps) per entry
        cfg = TrainConfig()
        m = init_model(SPECS, 0)
        before = m.theta.copy()
        ones = ModelParams(SPECS, np.ones(m.n_params))
        adam_step(m, ones, AdamState.zeros(m.n_params), cfg)
        step = before - m.theta
        assert np.all(np.abs(step - cfg.learning_rate) < 1e-6)

    def test_deterministic_updates(self):
        runs = []
        for _ in range(2):
            m = init_model(SPECS, 1)
            st = AdamState.zeros(m.n_params)
            b = small_batch(7)
            for _ in range(5):
                _, g = loss_and_grads(m, b)
                adam_step(m, g, st, TrainConfig())
            runs.append(m.theta.copy())
        assert np.array_equal(runs[0], runs[1])

    def test_state_advances(self):
        m = init_model(SPECS, 0)
        st = AdamState.zeros(m.n_params)
        _, g = loss_and_grads(m, small_batch(1))
        adam_step(m, g, st, TrainConfig())
        assert st.step == 1
        assert np.any(st.m != 0.0)

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(adam_beta1=1.0)


class TestTrainEpisodes:
    def test_zero_episodes_noop(self):
        c = make_client()
        before = c.model.theta.copy()
        train_episodes(c, 0, TrainConfig())
        assert np.array_equal(before, c.model.theta)
        assert c.loss_history == [] and c.acc_history == []

    def test_separable_toy_reaches_95(self):
        # oracle: sklearn logistic regression confirms the shard is separable
        from sklearn.linear_model import LogisticRegression

        c = make_client(seed=2, n=60, sep=True)
        lr = LogisticRegression().fit(c.train.x, c.train.y)
        assert lr.score(c.train.x, c.train.y) >= 0.99
        train_episodes(c, 50, TrainConfig(learning_rate=1e-2))
        train_acc = evaluate(c.model, c.train)
        assert train_acc >= 0.95

    def test_first_episode_reduces_loss(self):
        drops = []
        for seed in range(5):
            c = make_client(seed=seed, n=60, sep=True)
            init_loss, _ = loss_and_grads(c.model, c.train)
            train_episodes(c, 1, TrainConfig(learning_rate=1e-2))
            drops.append(init_loss - c.loss_history[0])
        assert np.mean(drops) > 0.0

    def test_empty_dataset_skipped_with_warning(self):
        c = make_client()
        c.train = Batch.empty(4)
        train_episodes(c, 3, TrainConfig())
        assert any("no training data" in e for e in c.events)


class TestEvaluate:
    def test_uniform_model_tie_breaks_low_class(self):
        m = init_model([LayerSpec(5, 8, "softmax")], 0)
        m.theta[:] = 0.0
        b = Batch(np.zeros((4, 5)), np.zeros(4, dtype=np.int64))
        assert evaluate(m, b) == 1.0

    def test_memorized_batch(self):
        c = make_client(seed=9, n=4, sep=True)
        train_episodes(c, 200, TrainConfig(learning_rate=1e-2))
        assert evaluate(c.model, c.train) == 1.0

    def test_untrained_near_chance(self):
        rng = np.random.default_rng(0)
        m = init_model((LayerSpec(10, 16, "relu"), LayerSpec(16, 8, "softmax")), 0)
        b = Batch(rng.normal(size=(1000, 10)), rng.integers(0, 8, size=1000))
        acc = evaluate(m, b)
        assert 0.08 <= acc <= 0.17

    def test_empty_batch(self):
        m = init_model(SPECS, 0)
        with pytest.raises(InputError):
            evaluate(m, Batch.empty(4))
