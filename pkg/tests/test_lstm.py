"""Loss function, network forward/backward, training, and grid search."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rancast.lstm as lstm_mod
from rancast.dataset import make_folds
from rancast.errors import (
    AllDivergedError,
    ConfigError,
    DataError,
    DivergenceError,
    ShapeMismatchError,
)
from rancast.loss import LossConfig, mean_wmae, wmae, wmae_grad
from rancast.lstm import (
    LstmSpec,
    TrainConfig,
    check_gradients,
    forward,
    grid_search,
    init_params,
    loss_and_grads,
    train,
)


class TestWmae:
    def test_underprovision_branch(self):
        assert wmae(-2.0, 3.0) == 6.0

    def test_overprovision_branch(self):
        assert wmae(2.0, 3.0) == 2.0
        assert wmae(2.0, 100.0) == 2.0

    def test_zero_error(self):
        assert wmae(0.0, 19.0) == 0.0

    def test_weight_one_is_absolute_error(self):
        errs = np.linspace(-5, 5, 101)
        assert np.array_equal(wmae(errs, 1.0), np.abs(errs))

    def test_nonpositive_weight(self):
        with pytest.raises(ConfigError):
            wmae(1.0, 0.0)
        with pytest.raises(ConfigError):
            wmae_grad(1.0, -2.0)

    @given(st.floats(-1e6, 1e6), st.floats(0.01, 100), st.floats(0.01, 100))
    @settings(max_examples=100, deadline=None)
    def test_positive_homogeneity(self, err, w, c):
        assert wmae(c * err, w) == pytest.approx(c * wmae(err, w), rel=1e-12)
        assert wmae(err, w) >= 0

    def test_gradient_branches(self):
        assert wmae_grad(-0.5, 19.0) == -19.0
        assert wmae_grad(0.5, 19.0) == 1.0
        assert wmae_grad(0.0, 19.0) == 0.0

    def test_loss_config_validation(self):
        assert LossConfig(1.0).w == 1.0
        with pytest.raises(ConfigError):
            LossConfig(0.0)
        with pytest.raises(ConfigError):
            LossConfig(1.0, sla_target=1.5)

    def test_mean_wmae(self):
        assert mean_wmae([1.0, 3.0], [2.0, 2.0], 3.0) == pytest.approx((3.0 + 1.0) / 2)


class TestForward:
    def test_zero_parameters_give_head_bias(self):
        spec = LstmSpec(input_dim=2, hidden=3, layers=2, lookback=4)
        params = {k: np.zeros(s) for k, s in spec.param_shapes().items()}
        params["head_b"] = np.asarray(0.75)
        X = np.random.default_rng(0).normal(size=(5, 4, 2))
        assert np.allclose(forward(spec, params, X), 0.75)

    def test_zero_scaled_window_matches_zero_input(self):
        spec = LstmSpec(input_dim=3, hidden=4, layers=1, lookback=5)
        params = init_params(spec, np.random.default_rng(1))
        X = np.random.default_rng(2).normal(size=(4, 5, 3))
        assert np.allclose(forward(spec, params, 0.0 * X),
                           forward(spec, params, np.zeros_like(X)))

    def test_golden_value(self):
        """Frozen output of a fixed seed/window pair; guards regressions."""
        spec = LstmSpec(input_dim=2, hidden=3, layers=1, lookback=4)
        params = init_params(spec, np.random.default_rng(1234))
        window = np.linspace(-1.0, 1.0, 8).reshape(1, 4, 2)
        value = float(forward(spec, params, window)[0])
        assert value == pytest.approx(-0.028970953796882446, abs=1e-15)

    def test_shape_mismatch(self):
        spec = LstmSpec(input_dim=2, hidden=3, layers=1, lookback=4)
        params = init_params(spec, np.random.default_rng(0))
        with pytest.raises(ShapeMismatchError):
            forward(spec, params, np.zeros((1, 5, 2)))

    def test_finite_for_extreme_inputs(self):
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=6)
        params = init_params(spec, np.random.default_rng(3))
        X = np.full((2, 6, 1), 1e6)
        assert np.all(np.isfinite(forward(spec, params, X)))


class TestGradients:
    @pytest.mark.parametrize("w", [1.0, 19.0])
    def test_bptt_matches_finite_differences(self, w):
        worst = max(check_gradients(LossConfig(w=w), seed=s) for s in range(5))
        assert worst < 1e-4

    def test_two_layer_spec(self):
        spec = LstmSpec(input_dim=2, hidden=3, layers=2, lookback=5)
        assert check_gradients(LossConfig(w=7.0), seed=42, spec=spec) < 1e-4

    def test_l2_gradient_included(self):
        spec = LstmSpec(input_dim=2, hidden=3, layers=1, lookback=4)
        rng = np.random.default_rng(0)
        params = init_params(spec, rng)
        X = rng.normal(size=(3, 4, 2))
        y = rng.normal(size=3)
        _, _, g0 = loss_and_grads(spec, params, X, y, LossConfig(1.0), l2=0.0)
        _, _, g1 = loss_and_grads(spec, params, X, y, LossConfig(1.0), l2=0.5)
        expected = g0["l0_wx"] + 2 * 0.5 * params["l0_wx"]
        assert np.allclose(g1["l0_wx"], expected, atol=1e-12)
        assert np.allclose(g1["l0_b"], g0["l0_b"], atol=1e-12)  # biases unpenalized

    def test_corrupted_gradient_detected(self, monkeypatch):
        """Negating one analytic gradient entry must break the check."""
        real = lstm_mod._backward

        def corrupted(spec, params, caches, dy):
            grads = real(spec, params, caches, dy)
            flat = grads["l0_wx"]
            idx = np.unravel_index(np.argmax(np.abs(flat)), flat.shape)
            flat[idx] = -flat[idx]
            return grads

        monkeypatch.setattr(lstm_mod, "_backward", corrupted)
        assert check_gradients(LossConfig(1.0), seed=0) > 1e-2


class TestTraining:
    def make_data(self, n=200, lookback=6, dim=1, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, lookback, dim))
        return X, rng.normal(size=n)

    def test_constant_target_fit(self):
        spec = LstmSpec(input_dim=1, hidden=8, layers=1, lookback=6)
        X, _ = self.make_data(300)
        y = np.zeros(300)
        result = train(spec, X, y, TrainConfig(epochs=25, seed=0, batch_size=32),
                       LossConfig(1.0))
        residual = np.mean(np.abs(forward(spec, result.params, X)))
        assert residual < 0.05

    def test_seed_determinism(self):
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=6)
        X, y = self.make_data()
        cfg = TrainConfig(epochs=5, seed=9)
        a = train(spec, X, y, cfg, LossConfig(2.0))
        b = train(spec, X, y, cfg, LossConfig(2.0))
        for key in a.params:
            assert np.array_equal(a.params[key], b.params[key])
        assert a.train_curve == b.train_curve

    def test_iid_noise_with_high_weight_sits_near_upper_quantile(self):
        """With w = 19 the optimal constant is the 95th percentile."""
        spec = LstmSpec(input_dim=1, hidden=8, layers=1, lookback=8)
        rng = np.random.default_rng(4)
        X = rng.normal(size=(2000, 8, 1))
        y = rng.normal(size=2000)
        result = train(spec, X, y, TrainConfig(epochs=40, seed=5),
                       LossConfig(19.0))
        preds = forward(spec, result.params, X)
        violation = np.mean(preds < y)
        assert 0.02 <= violation <= 0.09
        assert abs(np.median(preds) - np.quantile(y, 0.95)) < 0.35

    def test_curves_recorded(self):
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=6)
        X, y = self.make_data()
        Xv, yv = self.make_data(50, seed=1)
        result = train(spec, X, y, TrainConfig(epochs=7, seed=0), LossConfig(1.0),
                       val_inputs=Xv, val_targets=yv)
        assert len(result.train_curve) == 7 and len(result.val_curve) == 7
        assert all(np.isfinite(v) for v in result.train_curve + result.val_curve)

    def test_divergence_aborts(self):
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=6)
        X, y = self.make_data()
        y = y.copy()
        y[10] = np.nan
        with pytest.raises(DivergenceError, match="epoch"):
            train(spec, X, y, TrainConfig(epochs=3, seed=0), LossConfig(1.0))

    def test_empty_training_set(self):
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=6)
        with pytest.raises(DataError):
            train(spec, np.empty((0, 6, 1)), np.empty(0), TrainConfig(), LossConfig(1.0))

    def test_l2_shrinks_weights(self):
        spec = LstmSpec(input_dim=1, hidden=6, layers=1, lookback=6)
        X, y = self.make_data(400, seed=2)

        def weight_norm(l2):
            cfg = TrainConfig(epochs=15, seed=3, l2=l2)
            params = train(spec, X, y, cfg, LossConfig(1.0)).params
            return sum(float(np.sum(params[k] ** 2)) for k in lstm_mod.weight_keys(spec))

        assert weight_norm(10.0) < weight_norm(0.0)


class TestGridSearch:
    def make_matrix(self, hours=400, seed=0):
        rng = np.random.default_rng(seed)
        t = np.arange(hours)
        values = 10 + np.sin(2 * np.pi * t / 24) + rng.normal(0, 0.1, hours)
        return values[:, None]

    def test_single_point(self):
        matrix = self.make_matrix()
        plan = make_folds(400, 2, 80)
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=12)
        cfg = TrainConfig(epochs=3, seed=0)
        result = grid_search([(spec, cfg)], matrix, ("F10",), plan, LossConfig(1.0))
        assert result.best_spec == spec and result.best_config == cfg

    def test_divergent_candidate_excluded(self, monkeypatch):
        matrix = self.make_matrix()
        plan = make_folds(400, 2, 80)
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=12)
        bad = TrainConfig(epochs=3, seed=0, learning_rate=0.123)
        good = TrainConfig(epochs=3, seed=0)

        real_train = lstm_mod.train

        def fake_train(spec_, X, y, cfg_, loss_cfg, **kw):
            if cfg_.learning_rate == 0.123:
                raise DivergenceError("boom")
            return real_train(spec_, X, y, cfg_, loss_cfg, **kw)

        monkeypatch.setattr(lstm_mod, "train", fake_train)
        result = grid_search([(spec, bad), (spec, good)], matrix, ("F10",), plan,
                             LossConfig(1.0))
        assert result.best_config == good
        assert result.scores[0] == np.inf

    def test_all_diverged(self, monkeypatch):
        matrix = self.make_matrix()
        plan = make_folds(400, 2, 80)
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=12)

        def always_diverge(*a, **kw):
            raise DivergenceError("boom")

        monkeypatch.setattr(lstm_mod, "train", always_diverge)
        with pytest.raises(AllDivergedError):
            grid_search([(spec, TrainConfig(epochs=1))], matrix, ("F10",), plan,
                        LossConfig(1.0))

    def test_picks_lower_cv_loss(self):
        """Exhaustive two-point comparison equals the search result."""
        matrix = self.make_matrix(600, seed=3)
        plan = make_folds(600, 2, 100)
        spec = LstmSpec(input_dim=1, hidden=4, layers=1, lookback=12)
        a = TrainConfig(epochs=6, seed=0, learning_rate=3e-3)
        b = TrainConfig(epochs=1, seed=0, learning_rate=1e-5)  # clearly worse
        result = grid_search([(spec, a), (spec, b)], matrix, ("F10",), plan,
                             LossConfig(1.0))
        assert result.scores[0] < result.scores[1]
        assert result.best_config == a

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            grid_search([], self.make_matrix(), ("F10",), make_folds(400, 2, 80),
                        LossConfig(1.0))
