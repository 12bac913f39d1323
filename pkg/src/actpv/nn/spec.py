"""Model and training configuration types, plus the task presets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

from ..data import FeatureSchema
from ..errors import ConfigurationError

TASK_KINDS = ("regression", "binary", "multiclass")

# per-feature embedding widths for the MovieLens tasks; gender has no published width
MOVIELENS_EMBEDDING_DIMS = {"user_id": 8, "movie_id": 8, "age": 3, "occupation": 5, "gender": 2}
SYNTHETIC_EMBEDDING_DIM = 4
TARGET_HIDDEN = (50, 20, 10)
TEMPERATURE_GRID = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)


@dataclass(frozen=True)
class EmbeddingSpec:
    name: str
    vocab_size: int
    dim: int


@dataclass(frozen=True)
class ModelSpec:
    task_kind: str
    embedding_specs: tuple[EmbeddingSpec, ...] = ()
    n_numeric: int = 0
    hidden_sizes: tuple[int, ...] = TARGET_HIDDEN
    n_classes: int = 0
    temperature: float = 1.0
    dropout_rate: float = 0.0
    output_clamp: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "embedding_specs", tuple(
            e if isinstance(e, EmbeddingSpec) else EmbeddingSpec(*e) for e in self.embedding_specs))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.task_kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.task_kind!r}")
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise ConfigurationError("hidden_sizes must be a non-empty list of positive sizes")
        for e in self.embedding_specs:
            if e.vocab_size <= 0 or e.dim <= 0:
                raise ConfigurationError(f"embedding {e.name!r} needs positive vocab and dim")
        if self.n_numeric < 0 or self.input_dim == 0:
            raise ConfigurationError("model has no inputs")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ConfigurationError("temperature must be positive")
        if self.task_kind == "multiclass":
            if self.n_classes < 2:
                raise ConfigurationError("multiclass spec needs n_classes >= 2")
        elif self.temperature != 1.0:
            raise ConfigurationError("temperature only applies to multiclass heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if self.output_clamp is not None:
            lo, hi = self.output_clamp
            if self.task_kind != "regression" or not lo < hi:
                raise ConfigurationError("output_clamp needs a regression head and lower < upper")
            object.__setattr__(self, "output_clamp", (float(lo), float(hi)))

    @property
    def input_dim(self) -> int:
        return sum(e.dim for e in self.embedding_specs) + self.n_numeric

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.task_kind == "multiclass" else 1

    @property
    def n_neurons(self) -> int:
        return sum(self.hidden_sizes)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for e in self.embedding_specs:
            shapes[f"emb.{e.name}"] = (e.vocab_size, e.dim)
        fan_in = self.input_dim
        for i, h in enumerate(self.hidden_sizes):
            shapes[f"hidden.{i}.weight"] = (fan_in, h)
            shapes[f"hidden.{i}.bias"] = (h,)
            fan_in = h
        shapes["head.weight"] = (fan_in, self.output_dim)
        shapes["head.bias"] = (self.output_dim,)
        return shapes

    def with_dropout(self, rate: float) -> "ModelSpec":
        return replace(self, dropout_rate=rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["embedding_specs"] = [list(e) for e in (
            (s.name, s.vocab_size, s.dim) for s in self.embedding_specs)]
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["output_clamp"] = list(self.output_clamp) if self.output_clamp else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["embedding_specs"] = tuple(EmbeddingSpec(*e) for e in d.get("embedding_specs", ()))
        d["hidden_sizes"] = tuple(d["hidden_sizes"])
        if d.get("output_clamp") is not None:
            d["output_clamp"] = tuple(d["output_clamp"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    patience: int = 2
    validation_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validation_seed: int = 0

    def __post_init__(self):
        if self.max_epochs <= 0 or self.batch_size <= 0:
            raise ConfigurationError("max_epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.patience < 0:
            raise ConfigurationError("patience must be non-negative")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def spec_for_schema(schema: FeatureSchema, hidden_sizes=TARGET_HIDDEN, *,
                    temperature: float | None = None, dropout_rate: float = 0.0,
                    embedding_dims: dict | None = None) -> ModelSpec:
    """Target-model spec for a dataset schema with the preset embedding widths."""
    dims = dict(MOVIELENS_EMBEDDING_DIMS)
    if embedding_dims:
        dims.update(embedding_dims)
    embs = tuple(
        EmbeddingSpec(name, vocab, dims.get(name, SYNTHETIC_EMBEDDING_DIM))
        for name, vocab in zip(schema.categorical, schema.vocab_sizes)
    )
    if schema.task_kind == "multiclass":
        t = 0.2 if temperature is None else temperature
    else:
        t = 1.0
    return ModelSpec(
        task_kind=schema.task_kind,
        embedding_specs=embs,
        n_numeric=schema.n_numeric,
        hidden_sizes=tuple(hidden_sizes),
        n_classes=schema.n_classes,
        temperature=t,
        dropout_rate=dropout_rate,
    )


# MovieLens tasks train for up to 20 epochs, the click-through task for one.
MOVIELENS_TRAIN = TrainConfig(max_epochs=20, batch_size=256, learning_rate=1e-3, patience=2)
CRITEO_TRAIN = TrainConfig(max_epochs=1, batch_size=256, learning_rate=1e-3, patience=2)


def train_config_for(task_kind: str, **overrides) -> TrainConfig:
    base = CRITEO_TRAIN if task_kind == "binary" else MOVIELENS_TRAIN
    return replace(base, **overrides) if overrides else base
