"""Prediction variation across ensemble members and its downstream statistics."""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateBucketError, InputError, UndefinedMetricError, UsageError
from .rng import keyed_generator

PV_HEADER = "# actpv-pvtable v1"
NORM_TOL = 1e-9


def _value_pv_columns(P: np.ndarray) -> np.ndarray:
    """Sample std (divisor N-1) of each column, exactly 0 where a column is constant."""
    n = P.shape[0]
    mean = P.sum(axis=0) / n
    dev = P - mean
    pv = np.sqrt((dev * dev).sum(axis=0) / (n - 1))
    pv[np.all(P == P[0], axis=0)] = 0.0
    return pv


def value_pv(predictions) -> float:
    """Standard deviation of N >= 2 scalar predictions, with divisor N - 1."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if p.size < 2:
        raise UsageError("prediction variation needs at least two predictions")
    return float(_value_pv_columns(p[:, None])[0])


def _check_distributions(D: np.ndarray) -> None:
    if np.any(D < 0) or np.any(np.abs(D.sum(axis=-1) - 1.0) > NORM_TOL):
        raise InputError("member predictions must be probability vectors summing to 1")


def _dist_pv_columns(D: np.ndarray) -> np.ndarray:
    """Summed KL(member || mean) for a tensor shaped (N, n_examples, C)."""
    n = D.shape[0]
    mean = D.sum(axis=0) / n
    pos = D > 0
    if np.any(pos & (mean[None] <= 0)):
        raise AssertionError("ensemble mean has zero mass where a member does not")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, D * (np.log(np.where(pos, D, 1.0)) - np.log(np.where(pos, mean[None], 1.0))), 0.0)
    pv = terms.sum(axis=(0, 2))
    pv = np.maximum(pv, 0.0)
    pv[np.all(D == D[0], axis=(0, 2))] = 0.0
    return pv


def dist_pv(distributions) -> float:
    """Sum over members of KL(p_m || p_mean), natural log, 0 log 0 = 0."""
    D = np.asarray(distributions, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] < 2:
        raise UsageError("need an (N >= 2, C) array of member distributions")
    _check_distributions(D)
    return float(_dist_pv_columns(D[:, None, :])[0])


@dataclass(eq=False)
class PVTable:
    row_ids: np.ndarray
    pv: np.ndarray
    mean_prediction: np.ndarray
    pv_coefficient: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.row_ids)

    @property
    def mean_pv(self) -> float:
        return float(self.pv.mean())

    @property
    def std_pv(self) -> float:
        return float(self.pv.std())

    @property
    def mean_coefficient(self) -> float:
        if self.pv_coefficient is None:
            return float("nan")
        c = self.pv_coefficient[np.isfinite(self.pv_coefficient)]
        return float(c.mean()) if c.size else float("nan")

    def take(self, indices) -> "PVTable":
        idx = np.asarray(indices, dtype=np.int64)
        coef = self.pv_coefficient[idx] if self.pv_coefficient is not None else None
        return PVTable(self.row_ids[idx], self.pv[idx], self.mean_prediction[idx], coef)

    def aligned_to(self, row_ids) -> "PVTable":
        """Reorder to ``row_ids``; the two row-id sets must be identical."""
        row_ids = np.asarray(row_ids)
        if len(row_ids) != len(self.row_ids):
            raise InputError("PV tables cover different row ids")
        if np.array_equal(row_ids, self.row_ids):
            return self
        return self.select(row_ids)

    def select(self, row_ids) -> "PVTable":
        """Rows for ``row_ids`` in that order; every id must be present."""
        row_ids = np.asarray(row_ids)
        pos = {int(r): i for i, r in enumerate(self.row_ids)}
        try:
            idx = [pos[int(r)] for r in row_ids]
        except KeyError as exc:
            raise InputError(f"row id {exc.args[0]} missing from PV table") from None
        return self.take(idx)

    def summary(self) -> dict:
        return {"n": len(self), "pv_mean": self.mean_pv, "pv_std": self.std_pv,
                "pv_coeff_mean": self.mean_coefficient}

    def to_file(self, path) -> None:
        lines = [PV_HEADER, "row_id\tpv\tmean_prediction\tpv_coefficient"]
        multi = self.mean_prediction.ndim == 2
        for i in range(len(self)):
            mp = ("|".join(repr(float(v)) for v in self.mean_prediction[i]) if multi
                  else repr(float(self.mean_prediction[i])))
            coef = "NA"
            if self.pv_coefficient is not None and np.isfinite(self.pv_coefficient[i]):
                coef = repr(float(self.pv_coefficient[i]))
            lines.append(f"{int(self.row_ids[i])}\t{float(self.pv[i])!r}\t{mp}\t{coef}")
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    @classmethod
    def from_file(cls, path) -> "PVTable":
        with open(path, encoding="utf-8") as fh:
            if fh.readline().rstrip("\n") != PV_HEADER:
                raise InputError(f"{path} is not a PV table")
            fh.readline()
            rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
        row_ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
        pv = np.array([float(r[1]) for r in rows])
        if rows and "|" in rows[0][2]:
            mean = np.array([[float(v) for v in r[2].split("|")] for r in rows])
        else:
            mean = np.array([float(r[2]) for r in rows])
        coefs = [r[3] for r in rows]
        coef = None
        if any(c != "NA" for c in coefs):
            coef = np.array([float(c) if c != "NA" else math.nan for c in coefs])
        return cls(row_ids, pv, mean, coef)


def pv_table(matrix, task_kind: str | None = None, row_ids=None) -> PVTable:
    """Per-example prediction variation for a prediction matrix.

    ``matrix`` is a :class:`~actpv.ensemble.PredictionMatrix` or a raw array
    shaped ``(N, n)`` for value tasks or ``(N, n, C)`` for multiclass.
    """
    if hasattr(matrix, "values"):
        values, row_ids = matrix.values, matrix.row_ids
        task_kind = task_kind or matrix.task_kind
    else:
        values = np.asarray(matrix, dtype=np.float64)
        if row_ids is None:
            row_ids = np.arange(values.shape[1])
    row_ids = np.asarray(row_ids, dtype=np.int64)
    if values.size == 0 or values.shape[0] < 2:
        raise UsageError("prediction matrix needs at least two members and one example")
    if task_kind is None:
        task_kind = "multiclass" if values.ndim == 3 else "regression"
    if task_kind == "multiclass":
        if values.ndim != 3:
            raise InputError("multiclass prediction matrix must be (N, n, C)")
        bad = np.flatnonzero(np.any(np.abs(values.sum(axis=2) - 1.0) > NORM_TOL, axis=0))
        if bad.size:
            raise InputError(f"row {int(row_ids[bad[0]])}: member distributions not normalised")
        pv = _dist_pv_columns(values)
        mean = values.sum(axis=0) / values.shape[0]
        return PVTable(row_ids, pv, mean, None)
    if values.ndim != 2:
        raise InputError("value-task prediction matrix must be (N, n)")
    pv = _value_pv_columns(values)
    mean = values.sum(axis=0) / values.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(mean != 0, pv / np.abs(mean), np.nan)
    return PVTable(row_ids, pv, mean, coef)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size < 2:
        raise UsageError("pearson needs two vectors of equal length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(np.dot(da, da)))
    sb = math.sqrt(float(np.dot(db, db)))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedMetricError("correlation undefined for a constant vector")
    return float(min(1.0, max(-1.0, np.dot(da, db) / (sa * sb))))


def correlation_matrix(tables: Mapping[str, PVTable]) -> tuple[list[str], np.ndarray]:
    """Pairwise Pearson correlation of PV across tables sharing the same rows."""
    labels = list(tables)
    if not labels:
        raise UsageError("no PV tables given")
    ref = tables[labels[0]].row_ids
    aligned = [tables[k].aligned_to(ref).pv for k in labels]
    k = len(labels)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = pearson(aligned[i], aligned[j])
    return labels, out


def write_labeled_matrix(path, labels: Sequence[str], matrix: np.ndarray, header: str) -> None:
    lines = [header, "\t".join([""] + list(labels))]
    for lab, row in zip(labels, matrix):
        lines.append("\t".join([lab] + [repr(float(v)) for v in row]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ------------------------------------------------------------------ buckets


@dataclass(frozen=True)
class BucketScheme:
    """Percentile cut points; bucket 1 holds the lowest variation."""

    thresholds: tuple[float, ...]

    @property
    def K(self) -> int:
        return len(self.thresholds) + 1

    def assign(self, pv):
        """Bucket label(s) in 1..K; a value equal to a threshold goes to the lower bucket."""
        idx = np.searchsorted(np.asarray(self.thresholds), np.asarray(pv, dtype=np.float64), side="left")
        return idx + 1 if np.ndim(idx) else int(idx) + 1


def bucketize(train_pvs, K: int = 5) -> BucketScheme:
    """Thresholds at the nearest-rank ``i*100/K``-th percentiles (i = 1..K-1)."""
    v = np.sort(np.asarray(train_pvs, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise UsageError("no training PV values")
    if K < 2:
        raise ConfigurationError("need at least two buckets")
    if K > np.unique(v).size:
        raise DegenerateBucketError(f"{K} buckets requested but only {np.unique(v).size} distinct values")
    n = v.size
    cuts = []
    for i in range(1, K):
        rank = max(1, math.ceil(i * n / K))
        cuts.append(float(v[rank - 1]))
    collapsed = tuple(sorted(set(cuts)))
    if len(collapsed) < len(cuts):
        warnings.warn(f"tied percentile cut points collapsed: {K} -> {len(collapsed) + 1} buckets")
    return BucketScheme(collapsed)


def assign(scheme: BucketScheme, pv):
    return scheme.assign(pv)


# -------------------------------------------------------------- delta ratio


def _pv_values(table, row_ids=None):
    if isinstance(table, PVTable):
        return table
    arr = np.asarray(table, dtype=np.float64)
    return PVTable(np.arange(arr.size) if row_ids is None else np.asarray(row_ids), arr, np.zeros(arr.size))


def delta_ratio(pv_sub, pv_gt) -> float:
    """Mean |PV_sub - PV_gt| over examples divided by mean PV_gt."""
    sub, gt = _pv_values(pv_sub), _pv_values(pv_gt)
    if set(sub.row_ids.tolist()) != set(gt.row_ids.tolist()):
        raise InputError("PV tables cover different row ids")
    sub = sub.aligned_to(gt.row_ids)
    denom = float(gt.pv.mean())
    if not denom > 0:
        raise UndefinedMetricError("mean ground-truth PV is zero")
    return float(np.abs(sub.pv - gt.pv).mean() / denom)


@dataclass
class SweepPoint:
    size: int
    mean: float
    std: float
    values: list


def size_sweep(universe, sizes: Sequence[int], resamples: int = 20, seed: int = 0,
               task_kind: str | None = None) -> list[SweepPoint]:
    """Delta ratio of random sub-ensembles against the full universe.

    ``universe`` is a prediction matrix (or an object with ``predict_matrix``
    results in ``.values``). Sizes equal to the universe give one resample of
    the full set.
    """
    values = universe.values if hasattr(universe, "values") else np.asarray(universe, dtype=np.float64)
    task_kind = task_kind or getattr(universe, "task_kind", None)
    row_ids = getattr(universe, "row_ids", None)
    if resamples < 1:
        raise ConfigurationError("resamples must be >= 1")
    n_models = values.shape[0]
    gt = pv_table(values, task_kind, row_ids)
    out = []
    for size in sizes:
        if size < 2 or size > n_models:
            raise ConfigurationError(f"sub-ensemble size {size} outside [2, {n_models}]")
        reps = 1 if size == n_models else resamples
        drs = []
        for r in range(reps):
            members = np.sort(keyed_generator(seed, "size-sweep", size, r).choice(n_models, size, replace=False))
            drs.append(delta_ratio(pv_table(values[members], task_kind, gt.row_ids), gt))
        arr = np.array(drs)
        out.append(SweepPoint(int(size), float(arr.mean()),
                              float(arr.std(ddof=1)) if len(arr) > 1 else 0.0, drs))
    return out
