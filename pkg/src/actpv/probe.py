"""Activation-strength features taken from one trained target model."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data import Dataset
from .errors import ConfigurationError, InputError, UsageError
from .nn import ModelParams, ModelSpec
from .nn.engine import capture_activations, forward

STATS_HEADER = "# actpv-neuron-stats v1"
FEATURE_MODES = ("B", "BV")


@dataclass(eq=False)
class NeuronStats:
    mean: np.ndarray
    std: np.ndarray
    activation_rate: np.ndarray
    layer: np.ndarray
    n_reference: int = 0

    def __len__(self) -> int:
        return len(self.mean)

    @property
    def live(self) -> np.ndarray:
        return self.std > 0

    def to_file(self, path) -> None:
        lines = [STATS_HEADER, f"# n_reference={self.n_reference}",
                 "neuron\tlayer\tmean\tstd\tactivation_rate"]
        for i in range(len(self)):
            lines.append(f"{i}\t{int(self.layer[i])}\t{float(self.mean[i])!r}\t"
                         f"{float(self.std[i])!r}\t{float(self.activation_rate[i])!r}")
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    @classmethod
    def from_file(cls, path) -> "NeuronStats":
        with open(path, encoding="utf-8") as fh:
            if fh.readline().rstrip("\n") != STATS_HEADER:
                raise InputError(f"{path} is not a neuron-stats file")
            n_ref = int(fh.readline().strip().split("=")[1])
            fh.readline()
            rows = [line.split("\t") for line in fh if line.strip()]
        return cls(
            mean=np.array([float(r[2]) for r in rows]),
            std=np.array([float(r[3]) for r in rows]),
            activation_rate=np.array([float(r[4]) for r in rows]),
            layer=np.array([int(r[1]) for r in rows]),
            n_reference=n_ref,
        )


def layer_index(spec: ModelSpec) -> np.ndarray:
    return np.concatenate([np.full(h, i) for i, h in enumerate(spec.hidden_sizes)])


def stats_from_activations(acts: np.ndarray, layer=None) -> NeuronStats:
    """Per-neuron mean, sample std (divisor n - 1) and activation rate."""
    acts = np.asarray(acts, dtype=np.float64)
    n = acts.shape[0]
    if n == 0:
        raise UsageError("neuron statistics need at least one reference example")
    mean = acts.sum(axis=0) / n
    const = np.all(acts == acts[0], axis=0)
    mean[const] = acts[0, const]
    if n > 1:
        dev = acts - mean
        std = np.sqrt((dev * dev).sum(axis=0) / (n - 1))
    else:
        std = np.zeros(acts.shape[1])
    std[const] = 0.0
    rate = (acts > 0).sum(axis=0) / n
    if layer is None:
        layer = np.zeros(acts.shape[1], dtype=np.int64)
    return NeuronStats(mean, std, rate, np.asarray(layer), n)


def neuron_stats(model: ModelParams, spec: ModelSpec, reference_data: Dataset) -> NeuronStats:
    if len(reference_data) == 0:
        raise UsageError("neuron statistics need at least one reference example")
    acts = capture_activations(spec, model, reference_data.cat, reference_data.num)
    return stats_from_activations(acts, layer_index(spec))


def normalize(acts: np.ndarray, stats: NeuronStats) -> np.ndarray:
    """``(raw - mean) / std`` per neuron; dead neurons (std 0) map to 0."""
    acts = np.asarray(acts, dtype=np.float64)
    if acts.shape[-1] != len(stats):
        raise ConfigurationError(f"{acts.shape[-1]} activations but stats for {len(stats)} neurons")
    live = stats.live
    safe = np.where(live, stats.std, 1.0)
    return np.where(live, (acts - stats.mean) / safe, 0.0)


def features_from_activations(acts: np.ndarray, stats: NeuronStats, mode: str = "BV") -> np.ndarray:
    if mode not in FEATURE_MODES:
        raise ConfigurationError(f"feature mode must be one of {FEATURE_MODES}")
    binary = (np.asarray(acts) > 0).astype(np.float64)
    if mode == "B":
        if binary.shape[-1] != len(stats):
            raise ConfigurationError(f"{binary.shape[-1]} activations but stats for {len(stats)} neurons")
        return binary
    return np.concatenate([binary, normalize(acts, stats)], axis=-1)


@dataclass(frozen=True)
class ActivationVector:
    binary: np.ndarray
    value: np.ndarray


def activation_vector(model: ModelParams, spec: ModelSpec, stats: NeuronStats, example) -> ActivationVector:
    if len(stats) != spec.n_neurons:
        raise ConfigurationError(f"stats describe {len(stats)} neurons, model has {spec.n_neurons}")
    _, raw = forward(model, spec, example, capture=True)
    return ActivationVector((raw > 0).astype(np.int8), normalize(raw, stats))


def activation_features(model: ModelParams, spec: ModelSpec, stats: NeuronStats,
                        data: Dataset, mode: str = "BV") -> np.ndarray:
    """Feature matrix aligned with ``data.row_ids``: binary block, then values (BV)."""
    if len(stats) != spec.n_neurons:
        raise ConfigurationError(f"stats describe {len(stats)} neurons, model has {spec.n_neurons}")
    acts = capture_activations(spec, model, data.cat, data.num)
    return features_from_activations(acts, stats, mode)


def write_feature_matrix(path, row_ids, X: np.ndarray) -> None:
    """Feature dump, one row per example keyed by row_id."""
    tmp = f"{path}.tmp.npz"
    np.savez(tmp, row_ids=np.asarray(row_ids), features=X)
    os.replace(tmp, path)


class ActivationStrength(TransformerMixin, BaseEstimator):
    """Transformer from target-task rows to activation-strength features.

    ``fit`` collects per-neuron statistics on the reference rows;
    ``transform`` returns the binary indicators, followed by the normalised
    values when ``feature_mode == "BV"``. Inputs are :class:`Dataset` objects.

    Parameters
    ----------
    spec, params : the target model.
    feature_mode : ``"B"`` or ``"BV"``.
    """

    def __init__(self, spec: ModelSpec | None = None, params: ModelParams | None = None,
                 feature_mode: str = "BV"):
        self.spec = spec
        self.params = params
        self.feature_mode = feature_mode

    def fit(self, X: Dataset, y=None):
        if self.spec is None or self.params is None:
            raise ConfigurationError("ActivationStrength needs a target model spec and params")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigurationError(f"feature_mode must be one of {FEATURE_MODES}")
        self.stats_ = neuron_stats(self.params, self.spec, X)
        self.n_features_out_ = self.spec.n_neurons * len(self.feature_mode)
        return self

    def transform(self, X: Dataset) -> np.ndarray:
        if not hasattr(self, "stats_"):
            raise NotFittedError("ActivationStrength is not fitted yet")
        return activation_features(self.params, self.spec, self.stats_, X, self.feature_mode)

    def get_feature_names_out(self, input_features=None):
        names = [f"b{i}" for i in range(self.spec.n_neurons)]
        if self.feature_mode == "BV":
            names += [f"v{i}" for i in range(self.spec.n_neurons)]
        return np.array(names, dtype=object)
