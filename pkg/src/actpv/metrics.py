"""Target-task metrics: MSE, rounded-rating accuracy, AUC, Brier score."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, UndefinedMetricError

RATING_MIN, RATING_MAX = 1, 5


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def mse(pred, labels) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean((pred - labels) ** 2))


def rounded_accuracy(pred, labels) -> float:
    """Ratings clipped to [1, 5], rounded half away from zero, then compared."""
    r = round_half_away(np.clip(np.asarray(pred, dtype=np.float64), RATING_MIN, RATING_MAX))
    return float(np.mean(r == np.asarray(labels, dtype=np.float64)))


def auc(scores, positives) -> float:
    """ROC AUC as the Mann-Whitney rank statistic; tied pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives).astype(bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative examples")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def brier(probs, labels) -> float:
    """Mean squared distance between probability vectors and one-hot labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))


def target_metrics(predictions, labels, task_kind: str) -> dict:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if len(p) != len(y):
        raise InputError("predictions and labels differ in length")
    if task_kind == "regression":
        if p.ndim != 1:
            raise InputError("regression predictions must be a vector")
        return {"mse": mse(p, y), "acc": rounded_accuracy(p, y)}
    if task_kind == "multiclass":
        if p.ndim != 2:
            raise InputError("multiclass predictions must be (n, C)")
        if np.any(y < 0) or np.any(y >= p.shape[1]):
            raise InputError("class labels outside the prediction width")
        return {"acc": float(np.mean(p.argmax(axis=1) == y)), "brier": brier(p, y)}
    if task_kind == "binary":
        if p.ndim != 1 or not np.all((y == 0) | (y == 1)):
            raise InputError("binary task needs probability vector and 0/1 labels")
        return {"auc": auc(p, y == 1), "acc": float(np.mean((p >= 0.5) == (y == 1)))}
    raise InputError(f"unknown task kind {task_kind!r}")


SETTINGS_COLUMNS = {
    "regression": ("mse", "acc", "pv_mean", "pv_std", "pv_coeff"),
    "multiclass": ("acc", "pv_mean", "pv_std"),
    "binary": ("auc", "pv_mean", "pv_std", "pv_coeff"),
}


def settings_row(setting_label: str, matrix, pv, labels, task_kind: str) -> dict:
    """One row of the randomness-setting table: ensemble-mean accuracy plus PV stats."""
    mean_pred = matrix.values.mean(axis=0)
    row = {"setting": setting_label}
    row.update(target_metrics(mean_pred, labels, task_kind))
    row.update({"pv_mean": pv.mean_pv, "pv_std": pv.std_pv})
    if task_kind != "multiclass":
        row["pv_coeff"] = pv.mean_coefficient
    return row


def write_settings_table(path, rows: list[dict], task_kind: str) -> None:
    cols = ("setting",) + SETTINGS_COLUMNS[task_kind]
    lines = ["# actpv-settings v1", "\t".join(cols)]
    for r in rows:
        lines.append("\t".join([r["setting"]] + [repr(float(r[c])) for c in cols[1:]]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def select_temperature(results: dict[float, dict]) -> float:
    """Best Brier score; ties go to higher accuracy, then the smaller temperature."""
    return min(results, key=lambda t: (results[t]["brier"], -results[t]["acc"], t))


def temperature_sweep(spec, config, train, valid, T_grid, seeds) -> tuple[dict, float]:
    """Train one multiclass model per temperature with the same seeds."""
    from dataclasses import replace

    from .nn import predict
    from .nn import train as train_model

    if spec.task_kind != "multiclass":
        raise InputError("temperature sweep needs a multiclass task")
    results = {}
    for t in T_grid:
        s = replace(spec, temperature=float(t))
        params, _ = train_model(s, config, train, seeds)
        probs = predict(s, params, valid.cat, valid.num)
        results[float(t)] = target_metrics(probs, valid.labels, "multiclass")
    return results, select_temperature(results)
