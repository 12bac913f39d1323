import numpy as np
import pytest
from sklearn.base import clone

from actpv.errors import ConfigurationError, InputError
from actpv.estimator import (
    VariationClassifier,
    VariationRegressor,
    classification_metrics,
    compare_pv,
    mc_dropout_pv,
    regression_metrics,
    write_report,
)
from actpv.nn import TrainConfig, spec_for_schema
from actpv.pipeline import estimator_split, fit_variation_estimator
from actpv.variation import pv_table

FAST = dict(max_epochs=30, patience=3)


class TestRegressor:
    def test_constant_labels(self):
        X = np.random.default_rng(0).normal(size=(200, 6))
        y = np.full(200, 0.05)
        m = VariationRegressor(**FAST).fit(X, y)
        pred = m.predict(X)
        assert np.abs(pred - 0.05).max() < 1e-6
        assert regression_metrics(y, pred)["r2"] is None

    def test_output_within_clamp(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(400, 5))
        y = np.abs(X[:, 0]) * 0.1 + rng.exponential(0.01, size=400)
        m = VariationRegressor(**FAST).fit(X, y)
        lo, hi = m.clamp_
        assert lo == 0.0 and hi == pytest.approx(y.mean() + 3 * y.std())
        pred = m.predict(rng.normal(scale=50, size=(500, 5)))
        assert pred.min() >= 0.0 and pred.max() <= hi

    def test_learns_signal(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(2000, 4))
        y = 0.2 + 0.05 * np.tanh(X[:, 0] + X[:, 1])
        m = VariationRegressor(max_epochs=60, patience=5).fit(X[:1500], y[:1500])
        assert regression_metrics(y[1500:], m.predict(X[1500:]))["r2"] > 0.8

    def test_validation(self):
        with pytest.raises(InputError):
            VariationRegressor().fit(np.zeros((3, 2)), [0.1, -0.1, 0.2])
        with pytest.raises(ValueError):
            VariationRegressor().fit(np.array([[np.nan, 1.0]]), [0.1])
        m = VariationRegressor(**FAST).fit(np.ones((20, 2)), np.linspace(0, 1, 20))
        with pytest.raises(InputError):
            m.predict(np.ones((2, 3)))

    def test_sklearn_api(self):
        m = VariationRegressor(hidden_sizes=(8,), random_state=3)
        assert clone(m).get_params()["hidden_sizes"] == (8,)
        m.set_params(max_epochs=5)
        assert m.max_epochs == 5

    def test_deterministic_and_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(300, 3)), rng.random(300)
        a = VariationRegressor(**FAST, random_state=9).fit(X, y)
        b = VariationRegressor(**FAST, random_state=9).fit(X, y)
        assert a.params_.equals(b.params_)
        a.save(tmp_path / "r.npz")
        back = VariationRegressor.load(tmp_path / "r.npz")
        assert back.predict(X).tobytes() == a.predict(X).tobytes()
        assert back.clamp_ == a.clamp_
        with pytest.raises(InputError):
            VariationClassifier.load(tmp_path / "r.npz")


class TestClassifier:
    def test_separable_one_hot(self):
        labels = np.tile(np.arange(1, 6), 100)
        X = np.eye(5)[labels - 1]
        m = VariationClassifier(**FAST).fit(X, labels)
        rep = classification_metrics(m.predict_proba(X), labels, 5)
        assert all(a > 0.99 for a in rep["auc"])
        assert np.allclose(np.diag(rep["confusion"]), 1.0)

    def test_random_features(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(3000, 6))
        y = rng.integers(1, 6, size=3000)
        m = VariationClassifier(**FAST).fit(X[:2000], y[:2000])
        rep = classification_metrics(m.predict_proba(X[2000:]), y[2000:], 5)
        assert all(abs(a - 0.5) <= 0.1 for a in rep["auc"])

    def test_missing_bucket_warns(self):
        X = np.eye(3)[[0, 1, 2] * 10]
        with pytest.warns(UserWarning, match="no training examples"):
            m = VariationClassifier(n_buckets=4, max_epochs=2).fit(X, np.array([1, 2, 3] * 10))
        assert m.predict_proba(X).shape == (30, 4)

    def test_bad_labels(self):
        with pytest.raises(InputError):
            VariationClassifier(n_buckets=3).fit(np.zeros((2, 2)), [0, 1])
        with pytest.raises(ConfigurationError):
            VariationClassifier(n_buckets=1).fit(np.zeros((2, 2)), [1, 1])


class TestMetrics:
    def test_regression_worked(self):
        m = regression_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
        assert m["mse"] == pytest.approx(1 / 3) and m["r2"] == pytest.approx(0.5)

    def test_bucket_auc_worked(self):
        proba = np.array([[0.1, 0.9], [0.6, 0.4], [0.4, 0.6], [0.9, 0.1]])
        rep = classification_metrics(proba, [2, 2, 1, 1], 2)
        assert rep["auc"][1] == 0.75 and rep["auc"][0] == 0.75

    def test_absent_bucket(self):
        rep = classification_metrics(np.array([[0.7, 0.3, 0.0], [0.2, 0.8, 0.0]]), [1, 2], 3)
        assert rep["auc"][2] is None and rep["confusion"][2] == [0.0, 0.0, 0.0]
        assert rep["support"] == [1, 1, 0]

    def test_report_nan_is_null(self, tmp_path):
        write_report(tmp_path / "r.json", {"b": float("nan"), "a": [np.float64(1.5)]})
        assert (tmp_path / "r.json").read_text() == '{\n  "a": [\n    1.5\n  ],\n  "b": null\n}\n'


class TestCompare:
    def test_identical(self):
        pv = np.array([0.1, 0.3, 0.2, 0.5])
        r = compare_pv(pv, pv)
        assert r["pearson"] == pytest.approx(1.0) and r["rmse"] == 0.0 and r["r2"] == 1.0

    def test_shifted(self):
        pv = np.array([0.1, 0.3, 0.2, 0.5])
        r = compare_pv(pv + 0.1, pv)
        assert r["pearson"] == pytest.approx(1.0) and r["rmse"] == pytest.approx(0.1)
        assert r["r2"] < 1.0

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            compare_pv(np.zeros(3), np.zeros(4))


class TestDropout:
    CFG = TrainConfig(max_epochs=2, batch_size=128)

    def test_rate_zero(self, ml_data):
        spec = spec_for_schema(ml_data.schema)
        t = mc_dropout_pv(spec, self.CFG, ml_data, ml_data.head(50), rate=0.0, passes=5)
        assert np.all(t.pv == 0.0)

    def test_positive_rate(self, ml_data):
        spec = spec_for_schema(ml_data.schema)
        a = mc_dropout_pv(spec, self.CFG, ml_data, ml_data.head(50), rate=0.2, passes=10, seed=1)
        b = mc_dropout_pv(spec, self.CFG, ml_data, ml_data.head(50), rate=0.2, passes=10, seed=1)
        assert np.all(a.pv > 0) and a.pv.tobytes() == b.pv.tobytes()

    def test_bad_rate(self, ml_data):
        spec = spec_for_schema(ml_data.schema)
        with pytest.raises(ConfigurationError):
            mc_dropout_pv(spec, self.CFG, ml_data, ml_data, rate=1.0)


def test_pipeline_end_to_end(ml_data):
    from actpv.ensemble import RandomnessSetting, predict_matrix, train_ensemble
    spec = spec_for_schema(ml_data.schema)
    ens = train_ensemble(spec, TrainConfig(max_epochs=2), ml_data, RandomnessSetting.from_code("R3"), 3, 0)
    pv = pv_table(predict_matrix(ens, ml_data))
    d1, d2, p1, p2 = estimator_split(ml_data, pv, 0)
    assert len(d1) + len(d2) == len(ml_data)
    reg = fit_variation_estimator(spec, ens.members[0], d1, d2, p1, p2, estimator_params=FAST)
    assert set(reg.report) >= {"mse", "r2", "clamp"}
    cls = fit_variation_estimator(spec, ens.members[0], d1, d2, p1, p2, objective="cls",
                                  feature_mode="B", estimator_params=FAST)
    assert len(cls.report["auc"]) == 5
    with pytest.raises(ConfigurationError):
        fit_variation_estimator(spec, ens.members[0], d1, d2, p1, p2, objective="x")
