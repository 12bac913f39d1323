"""End-to-end steps shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset, split
from .errors import ConfigurationError, InputError
from .estimator import (
    VariationClassifier,
    VariationRegressor,
    classification_metrics,
    regression_metrics,
)
from .nn import ModelParams, ModelSpec
from .probe import NeuronStats, activation_features, neuron_stats
from .variation import BucketScheme, PVTable, bucketize

TASKS = {"ml-r": "regression", "ml-c": "multiclass", "synth-binary": "binary"}


def task_kind_for(task: str) -> str:
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    return TASKS[task]


def as_task(data: Dataset, task: str) -> Dataset:
    kind = task_kind_for(task)
    if data.schema.task_kind == kind:
        return data
    if {data.schema.task_kind, kind} == {"regression", "multiclass"}:
        return data.with_task(kind)
    raise InputError(f"{task} cannot use a {data.schema.task_kind} dataset")


def load_task_data(data_dir, task: str) -> tuple[Dataset, Dataset]:
    d = Path(data_dir)
    for name in ("train.tsv", "test.tsv"):
        if not (d / name).exists():
            raise InputError(f"{d / name} not found; run prepare-data first")
    return as_task(load_dataset(d / "train.tsv"), task), as_task(load_dataset(d / "test.tsv"), task)


def estimator_split(test_data: Dataset, pv: PVTable, seed: int) -> tuple[Dataset, Dataset, PVTable, PVTable]:
    """Halve the ground-truth rows into estimator-train and estimator-test parts."""
    if not set(pv.row_ids.tolist()) == set(test_data.row_ids.tolist()):
        raise InputError("PV table and dataset cover different rows")
    d1, d2 = split(test_data, [0.5, 0.5], seed, names=["est_train", "est_test"])
    return d1, d2, pv.select(d1.row_ids), pv.select(d2.row_ids)


@dataclass
class EstimatorRun:
    objective: str
    feature_mode: str
    model: object
    stats: NeuronStats
    report: dict
    test_prediction: np.ndarray
    scheme: BucketScheme | None = None
    extra: dict = field(default_factory=dict)


def fit_variation_estimator(spec: ModelSpec, target: ModelParams, d1: Dataset, d2: Dataset,
                            pv1: PVTable, pv2: PVTable, *, objective: str = "reg",
                            feature_mode: str = "BV", seed: int = 0, n_buckets: int = 5,
                            estimator_params: dict | None = None) -> EstimatorRun:
    """Neuron stats on the estimator-train rows, features for both halves, fit, evaluate."""
    stats = neuron_stats(target, spec, d1)
    X1 = activation_features(target, spec, stats, d1, feature_mode)
    X2 = activation_features(target, spec, stats, d2, feature_mode)
    kwargs = dict(estimator_params or {})
    if objective == "reg":
        model = VariationRegressor(random_state=seed, **kwargs).fit(X1, pv1.pv)
        pred = model.predict(X2)
        report = regression_metrics(pv2.pv, pred)
        report["clamp"] = list(model.clamp_)
        return EstimatorRun(objective, feature_mode, model, stats, report, pred)
    if objective == "cls":
        scheme = bucketize(pv1.pv, n_buckets)
        y1, y2 = scheme.assign(pv1.pv), scheme.assign(pv2.pv)
        model = VariationClassifier(n_buckets=scheme.K, random_state=seed, **kwargs).fit(X1, y1)
        proba = model.predict_proba(X2)
        report = classification_metrics(proba, y2, scheme.K)
        report["thresholds"] = list(scheme.thresholds)
        return EstimatorRun(objective, feature_mode, model, stats, report, proba, scheme)
    raise ConfigurationError(f"objective must be 'reg' or 'cls', got {objective!r}")
