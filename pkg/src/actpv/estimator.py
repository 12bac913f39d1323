"""The variation estimator: an MLP from activation features to ensemble PV.

Two sklearn-style estimators share one engine. :class:`VariationRegressor`
predicts PV directly with its output clamped to ``[0, mean + 3 std]`` of the
training labels; :class:`VariationClassifier` predicts percentile buckets.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .errors import ConfigurationError, InputError, UndefinedMetricError
from .metrics import auc
from .nn import ModelSpec, TrainConfig, fit_arrays, init_params, load_model, predict, save_model
from .nn import train as train_model
from .rng import derive_seeds, keyed_generator
from .variation import PVTable, pearson, pv_table

ESTIMATOR_HIDDEN = (100, 50)


def _no_cat(n: int) -> np.ndarray:
    return np.zeros((n, 0), dtype=np.int64)


class _VariationMLP(BaseEstimator):
    def __init__(self, hidden_sizes=ESTIMATOR_HIDDEN, batch_size=256, learning_rate=1e-3,
                 max_epochs=150, patience=5, validation_fraction=0.1, random_state=0):
        self.hidden_sizes = hidden_sizes
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(max_epochs=self.max_epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, patience=self.patience,
                           validation_fraction=self.validation_fraction,
                           validation_seed=int(self.random_state))

    def _seeds(self) -> tuple[int, int]:
        init_seed, shuffle_seed = derive_seeds(int(self.random_state), "variation-estimator", 2)
        return init_seed, shuffle_seed

    def _fit_engine(self, spec: ModelSpec, X, y, init=None):
        init_seed, shuffle_seed = self._seeds()
        params, hist = fit_arrays(spec, self._train_config(), _no_cat(len(X)), X, y,
                                  np.arange(len(X)), init_seed=init_seed,
                                  shuffle_seed=shuffle_seed, init=init)
        self.spec_ = spec
        self.params_ = params
        self.history_ = hist
        self.n_features_in_ = X.shape[1]

    def _raw_predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return predict(self.spec_, self.params_, _no_cat(len(X)), X)

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        save_model(path, self.spec_, self.params_,
                   {"random_state": int(self.random_state)},
                   {"estimator": type(self).__name__, "init_params": self.get_params(),
                    "state": self._extra_state()})

    def _extra_state(self) -> dict:
        return {}

    @classmethod
    def load(cls, path):
        spec, params, meta = load_model(path)
        extra = meta["extra"]
        if extra.get("estimator") != cls.__name__:
            raise InputError(f"{path} holds a {extra.get('estimator')}, not a {cls.__name__}")
        kwargs = dict(extra["init_params"])
        kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
        est = cls(**kwargs)
        est.spec_, est.params_ = spec, params
        est.n_features_in_ = spec.n_numeric
        est._restore_state(extra.get("state", {}))
        return est

    def _restore_state(self, state: dict) -> None:
        pass


class VariationRegressor(RegressorMixin, _VariationMLP):
    """MSE regression onto PV labels with a clamped output.

    The clamp sits inside the training graph, so examples whose output is
    clamped contribute no gradient. The head starts at zero weights and the
    label mean, which keeps every initial output inside the clamp window.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if np.any(y < 0):
            raise InputError("PV labels must be non-negative")
        mean, std = float(y.mean()), float(y.std())
        upper = max(mean + 3.0 * std, 1e-12)
        self.clamp_ = (0.0, upper)
        spec = ModelSpec("regression", (), X.shape[1], tuple(self.hidden_sizes),
                         output_clamp=self.clamp_)
        init = init_params(spec, self._seeds()[0])
        init.arrays["head.weight"][:] = 0.0
        init.arrays["head.bias"][:] = min(mean, upper)
        self._fit_engine(spec, X, y, init=init)
        return self

    def predict(self, X) -> np.ndarray:
        return self._raw_predict(X)

    def _extra_state(self):
        return {"clamp": list(self.clamp_)}

    def _restore_state(self, state):
        self.clamp_ = tuple(state["clamp"])


class VariationClassifier(ClassifierMixin, _VariationMLP):
    """Softmax classifier over PV buckets labelled ``1..n_buckets``."""

    def __init__(self, n_buckets=5, hidden_sizes=ESTIMATOR_HIDDEN, batch_size=256,
                 learning_rate=1e-3, max_epochs=150, patience=5, validation_fraction=0.1,
                 random_state=0):
        super().__init__(hidden_sizes, batch_size, learning_rate, max_epochs, patience,
                         validation_fraction, random_state)
        self.n_buckets = n_buckets

    def fit(self, X, y):
        if self.n_buckets < 2:
            raise ConfigurationError("need at least two buckets")
        X, y = check_X_y(X, y, dtype=np.float64)
        y = np.asarray(y).astype(np.int64)
        if np.any(y < 1) or np.any(y > self.n_buckets):
            raise InputError(f"bucket labels must lie in 1..{self.n_buckets}")
        missing = sorted(set(range(1, self.n_buckets + 1)) - set(np.unique(y).tolist()))
        if missing:
            warnings.warn(f"buckets {missing} have no training examples")
        self.classes_ = np.arange(1, self.n_buckets + 1)
        spec = ModelSpec("multiclass", (), X.shape[1], tuple(self.hidden_sizes),
                         n_classes=self.n_buckets)
        self._fit_engine(spec, X, (y - 1).astype(np.float64))
        return self

    def predict_proba(self, X) -> np.ndarray:
        return self._raw_predict(X)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def _restore_state(self, state):
        self.classes_ = np.arange(1, self.n_buckets + 1)


def train_regressor(features, pv_labels, estimator_spec: dict | None = None, seed: int = 0) -> VariationRegressor:
    return VariationRegressor(random_state=seed, **(estimator_spec or {})).fit(features, pv_labels)


def train_classifier(features, bucket_labels, estimator_spec: dict | None = None, seed: int = 0) -> VariationClassifier:
    return VariationClassifier(random_state=seed, **(estimator_spec or {})).fit(features, bucket_labels)


# --------------------------------------------------------------- evaluation


def regression_metrics(y_true, y_pred) -> dict:
    """MSE and R^2 (about the mean of ``y_true``); R^2 is ``None`` when undefined."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise InputError("label and prediction vectors differ in shape")
    resid = y_true - y_pred
    ss_res = float(np.dot(resid, resid))
    centred = y_true - y_true.mean()
    ss_tot = float(np.dot(centred, centred))
    return {"mse": ss_res / len(y_true), "r2": (1.0 - ss_res / ss_tot) if ss_tot > 0 else None}


def eval_regression(model, features, pv_labels) -> dict:
    return regression_metrics(pv_labels, model.predict(features))


def classification_metrics(proba, labels, K: int) -> dict:
    """Per-bucket one-vs-rest AUC, row-normalised confusion matrix, accuracy.

    Labels are 1..K; an AUC is ``None`` when its bucket (or its complement) is
    absent from ``labels``, and a confusion row stays zero when the bucket is empty.
    """
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if np.any(labels < 1) or np.any(labels > K):
        raise InputError(f"bucket labels must lie in 1..{K}")
    aucs = []
    for k in range(1, K + 1):
        try:
            aucs.append(auc(proba[:, k - 1], labels == k))
        except UndefinedMetricError:
            aucs.append(None)
    pred = proba.argmax(axis=1) + 1
    counts = np.zeros((K, K))
    np.add.at(counts, (labels - 1, pred - 1), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    confusion = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    return {"auc": aucs, "confusion": confusion.tolist(), "accuracy": float(np.mean(pred == labels)),
            "support": counts.sum(axis=1).astype(int).tolist()}


def eval_classification(model, features, bucket_labels, K: int | None = None) -> dict:
    K = K or model.n_buckets
    return classification_metrics(model.predict_proba(features), bucket_labels, K)


def write_confusion(path, confusion) -> None:
    c = np.asarray(confusion)
    K = c.shape[0]
    lines = ["# actpv-confusion v1 (rows: true bucket, normalised by row count)",
             "\t".join(["true\\pred"] + [str(k) for k in range(1, K + 1)])]
    for k in range(K):
        lines.append("\t".join([str(k + 1)] + [repr(float(v)) for v in c[k]]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report(path, report: dict) -> None:
    """Structured-text (JSON) report with sorted keys; NaN is written as null."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(report), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------- dropout baseline


def mc_dropout_pv(spec: ModelSpec, config: TrainConfig, train_data: Dataset, test_data: Dataset,
                  rate: float = 0.2, passes: int = 100, seed: int = 0,
                  return_model: bool = False):
    """PV from repeated stochastic forward passes of one dropout-trained model.

    The model trains with RandInit and Shuffle seeds derived from ``seed``;
    each inference pass draws its own masks from a stream keyed by the pass
    index. ``rate == 0`` gives deterministic passes and zero PV.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError("dropout rate must lie in [0, 1)")
    if passes < 2:
        raise ConfigurationError("need at least two inference passes")
    from .ensemble import RandomnessSetting, make_seed_bundles

    dspec = replace(spec, dropout_rate=rate)
    bundle = make_seed_bundles(RandomnessSetting.from_code("R3"), 1, seed)[0]
    bundle = replace(bundle, dropout_seed=derive_seeds(seed, "dropout-train", 1)[0])
    params, _ = train_model(dspec, config, train_data, bundle)
    rows = []
    for k in range(passes):
        rng = keyed_generator(seed, "dropout-infer", k) if rate > 0 else None
        rows.append(predict(dspec, params, test_data.cat, test_data.num, dropout_rng=rng))
    table = pv_table(np.stack(rows), spec.task_kind, test_data.row_ids)
    return (table, dspec, params) if return_model else table


def compare_pv(pv_a, pv_b) -> dict:
    """Agreement of ``pv_a`` with ``pv_b`` taken as ground truth."""
    if isinstance(pv_a, PVTable) and isinstance(pv_b, PVTable):
        if set(pv_a.row_ids.tolist()) != set(pv_b.row_ids.tolist()):
            raise InputError("PV tables cover different row ids")
        a = pv_a.aligned_to(pv_b.row_ids).pv
        b = pv_b.pv
    else:
        a = np.asarray(pv_a, dtype=np.float64)
        b = np.asarray(pv_b, dtype=np.float64)
        if a.shape != b.shape:
            raise InputError("PV vectors differ in length")
    reg = regression_metrics(b, a)
    try:
        corr = pearson(a, b)
    except UndefinedMetricError:
        corr = None
    return {"pearson": corr, "rmse": math.sqrt(reg["mse"]), "r2": reg["r2"]}
