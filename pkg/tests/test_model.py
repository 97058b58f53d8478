"""Forecast model bundle: prediction path and bit-exact serialization."""

import numpy as np
import pytest

from rancast.dataset import Normalizer
from rancast.errors import DataError, ShapeMismatchError
from rancast.features import FeatureRecipe
from rancast.loss import LossConfig
from rancast.lstm import LstmSpec, TrainConfig, forward, init_params
from rancast.model import ForecastModel


@pytest.fixture
def model():
    recipe = FeatureRecipe(variant="ran", cell="GU14", lookback=6,
                           ran_labels=("F16", "F17"))
    spec = LstmSpec(input_dim=3, hidden=4, layers=2, lookback=6)
    params = init_params(spec, np.random.default_rng(0))
    norm = Normalizer(("F10", "F16", "F17"),
                      np.array([50.0, 80.0, 60.0]), np.array([10.0, 20.0, 5.0]))
    return ForecastModel(
        spec=spec, params=params, normalizer=norm, recipe=recipe,
        loss=LossConfig(19.0, 0.05), train_config=TrainConfig(epochs=3),
        meta={"config_hash": "abc123"},
    )


class TestPrediction:
    def test_inverse_normalization(self, model):
        rng = np.random.default_rng(1)
        window = rng.uniform(40, 90, size=(6, 3))
        normed = model.normalizer.transform_matrix(window[None], model.recipe.columns)
        expected = forward(model.spec, model.params, normed)[0] * 10.0 + 50.0
        assert model.predict_window(window) == pytest.approx(expected, abs=1e-12)

    def test_batch_matches_single(self, model):
        rng = np.random.default_rng(2)
        windows = rng.uniform(40, 90, size=(5, 6, 3))
        batch = model.predict_window_batch(windows)
        singles = [model.predict_window(w) for w in windows]
        assert np.allclose(batch, singles, atol=1e-12)

    def test_shape_guard(self, model):
        with pytest.raises(ShapeMismatchError):
            model.predict_window(np.zeros((6, 2)))


class TestSerialization:
    def test_round_trip_is_bit_exact(self, model, tmp_path):
        path = tmp_path / "model.json"
        model.save(path)
        loaded = ForecastModel.load(path)
        for key, value in model.params.items():
            assert np.array_equal(loaded.params[key], value)
        assert loaded.recipe == model.recipe
        assert loaded.loss == model.loss
        assert loaded.normalizer.labels == model.normalizer.labels
        assert np.array_equal(loaded.normalizer.mean, model.normalizer.mean)

        second = tmp_path / "model2.json"
        loaded.save(second)
        assert path.read_bytes() == second.read_bytes()

    def test_predictions_survive_round_trip(self, model, tmp_path):
        path = tmp_path / "model.json"
        model.save(path)
        loaded = ForecastModel.load(path)
        rng = np.random.default_rng(3)
        windows = rng.uniform(40, 90, size=(4, 6, 3))
        assert np.array_equal(loaded.predict_window_batch(windows),
                              model.predict_window_batch(windows))

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(DataError):
            ForecastModel.load(path)

    def test_parameter_shape_validation(self, model):
        bad = dict(model.params)
        bad["head_w"] = np.zeros(7)
        with pytest.raises(ShapeMismatchError):
            ForecastModel(spec=model.spec, params=bad, normalizer=model.normalizer,
                          recipe=model.recipe, loss=model.loss,
                          train_config=model.train_config)
