"""Datasets for the target tasks: ingestion, synthetic generation, splitting.

A :class:`Dataset` stores its rows column-wise (categorical id matrix,
numeric matrix, label vector, row ids) because every consumer works on
mini-batches; :meth:`Dataset.example` gives the per-row view.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError, ParseError
from .rng import hash_uint64, keyed_generator

TASK_KINDS = ("regression", "binary", "multiclass")

ML_GENRES = (
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical",
    "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
ML_AGES = (1, 18, 25, 35, 45, 50, 56)
ML_OCCUPATIONS = 21
ML_CATEGORICAL = ("user_id", "gender", "age", "occupation", "movie_id")

DUMP_HEADER = "# actpv-dataset v1"


@dataclass(frozen=True)
class FeatureSchema:
    categorical: tuple[str, ...]
    vocab_sizes: tuple[int, ...]
    n_numeric: int
    task_kind: str
    n_classes: int = 0
    id_maps: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.task_kind!r}")
        if len(self.categorical) != len(self.vocab_sizes):
            raise ConfigurationError("one vocab size per categorical feature")
        if any(v <= 0 for v in self.vocab_sizes):
            raise ConfigurationError("vocab sizes must be positive")
        if self.task_kind == "multiclass" and self.n_classes < 2:
            raise ConfigurationError("multiclass schema needs n_classes >= 2")

    def to_dict(self) -> dict:
        return {
            "categorical": list(self.categorical),
            "vocab_sizes": list(self.vocab_sizes),
            "n_numeric": self.n_numeric,
            "task_kind": self.task_kind,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            categorical=tuple(d["categorical"]),
            vocab_sizes=tuple(int(v) for v in d["vocab_sizes"]),
            n_numeric=int(d["n_numeric"]),
            task_kind=d["task_kind"],
            n_classes=int(d.get("n_classes", 0)),
        )


@dataclass(frozen=True)
class Example:
    categorical: dict
    numeric: np.ndarray
    label: float
    row_id: int


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: FeatureSchema
    cat: np.ndarray
    num: np.ndarray
    labels: np.ndarray
    row_ids: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.row_ids)
        if self.cat.shape != (n, len(self.schema.categorical)):
            raise InputError(f"categorical block has shape {self.cat.shape}")
        if self.num.shape != (n, self.schema.n_numeric):
            raise InputError(f"numeric block has shape {self.num.shape}")
        if self.labels.shape != (n,):
            raise InputError("one label per row required")
        for arr in (self.cat, self.num, self.labels, self.row_ids):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.row_ids)

    def example(self, i: int) -> Example:
        return Example(
            categorical={name: int(self.cat[i, j]) for j, name in enumerate(self.schema.categorical)},
            numeric=self.num[i].copy(),
            label=self.labels[i].item(),
            row_id=int(self.row_ids[i]),
        )

    def take(self, indices, split_name: str | None = None, **provenance) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        prov = dict(self.provenance)
        if split_name is not None:
            prov["split_name"] = split_name
        prov.update(provenance)
        return Dataset(
            schema=self.schema,
            cat=self.cat[indices].copy(),
            num=self.num[indices].copy(),
            labels=self.labels[indices].copy(),
            row_ids=self.row_ids[indices].copy(),
            provenance=prov,
        )

    def head(self, n: int) -> "Dataset":
        return self.take(np.arange(min(n, len(self))))

    def with_task(self, task_kind: str, n_classes: int = 0) -> "Dataset":
        """Re-label a rating dataset: ``multiclass`` maps rating r to class r-1."""
        labels = self.labels
        if task_kind == "multiclass" and self.schema.task_kind == "regression":
            labels = (np.rint(labels) - 1).astype(np.int64)
            n_classes = n_classes or 5
        elif task_kind == "regression" and self.schema.task_kind == "multiclass":
            labels = labels.astype(np.float64) + 1.0
        schema = FeatureSchema(
            self.schema.categorical, self.schema.vocab_sizes, self.schema.n_numeric,
            task_kind, n_classes if task_kind == "multiclass" else 0, self.schema.id_maps,
        )
        return Dataset(schema, self.cat.copy(), self.num.copy(), labels.copy(),
                       self.row_ids.copy(), dict(self.provenance))

    def same_rows(self, other: "Dataset") -> bool:
        return np.array_equal(self.row_ids, other.row_ids)

    def validate(self) -> None:
        """Check schema closure and label ranges."""
        if len(np.unique(self.row_ids)) != len(self):
            raise InputError("row ids must be unique")
        for j, (name, vocab) in enumerate(zip(self.schema.categorical, self.schema.vocab_sizes)):
            col = self.cat[:, j]
            if len(col) and (col.min() < 0 or col.max() >= vocab):
                raise InputError(f"feature {name!r} has ids outside [0, {vocab})")
        check_labels(self.labels, self.schema)


def check_labels(labels: np.ndarray, schema: FeatureSchema) -> None:
    if schema.task_kind == "binary":
        if not np.all((labels == 0) | (labels == 1)):
            raise InputError("binary labels must be 0 or 1")
    elif schema.task_kind == "multiclass":
        if np.any(labels < 0) or np.any(labels >= schema.n_classes) or np.any(labels != np.floor(labels)):
            raise InputError(f"class labels must be integers in [0, {schema.n_classes})")
    elif not np.all(np.isfinite(labels)):
        raise InputError("regression labels must be finite")


# ---------------------------------------------------------------- MovieLens


def _split_fields(line: str, n: int, path, lineno: int) -> list[str]:
    parts = line.rstrip("\r\n").split("::")
    if len(parts) != n:
        raise ParseError(f"expected {n} '::'-separated fields, got {len(parts)}", lineno, path)
    return parts


def _read_lines(path):
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def load_movielens(ratings_path, users_path, movies_path) -> Dataset:
    """Load the ml-1m ``::`` format into a regression dataset.

    Categorical features are user id, gender, age bucket, occupation and
    movie id (all remapped densely in file order); genres become an 18-slot
    multi-hot numeric block. Titles are ignored.
    """
    user_map: dict[int, int] = {}
    user_rows: list[tuple[int, int, int]] = []
    age_index = {a: i for i, a in enumerate(ML_AGES)}
    for lineno, line in _read_lines(users_path):
        uid, gender, age, occ, _zip = _split_fields(line, 5, users_path, lineno)
        try:
            uid_i, age_i, occ_i = int(uid), int(age), int(occ)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, users_path) from None
        if gender not in ("M", "F"):
            raise ParseError(f"unknown gender {gender!r}", lineno, users_path)
        if age_i not in age_index:
            raise ParseError(f"unknown age bucket {age_i}", lineno, users_path)
        if not 0 <= occ_i < ML_OCCUPATIONS:
            raise ParseError(f"occupation {occ_i} out of range", lineno, users_path)
        if uid_i in user_map:
            raise ParseError(f"duplicate user {uid_i}", lineno, users_path)
        user_map[uid_i] = len(user_map)
        user_rows.append((0 if gender == "M" else 1, age_index[age_i], occ_i))

    genre_index = {g: i for i, g in enumerate(ML_GENRES)}
    movie_map: dict[int, int] = {}
    movie_genres: list[np.ndarray] = []
    for lineno, line in _read_lines(movies_path):
        # titles may contain "::"-free text only, but split from both ends to be safe
        stripped = line.rstrip("\r\n")
        head, _, genres = stripped.rpartition("::")
        mid, sep, _title = head.partition("::")
        if not sep or not head:
            raise ParseError("expected MovieID::Title::Genres", lineno, movies_path)
        try:
            mid_i = int(mid)
        except ValueError:
            raise ParseError(f"bad movie id {mid!r}", lineno, movies_path) from None
        vec = np.zeros(len(ML_GENRES))
        for token in genres.split("|"):
            if token not in genre_index:
                raise ParseError(f"unknown genre {token!r}", lineno, movies_path)
            vec[genre_index[token]] = 1.0
        if mid_i in movie_map:
            raise ParseError(f"duplicate movie {mid_i}", lineno, movies_path)
        movie_map[mid_i] = len(movie_map)
        movie_genres.append(vec)

    users_arr = np.array(user_rows, dtype=np.int64).reshape(-1, 3)
    genres_arr = np.array(movie_genres).reshape(-1, len(ML_GENRES))
    u_idx: list[int] = []
    m_idx: list[int] = []
    ratings: list[float] = []
    for lineno, line in _read_lines(ratings_path):
        uid, mid, rating, _ts = _split_fields(line, 4, ratings_path, lineno)
        try:
            uid_i, mid_i, r = int(uid), int(mid), int(rating)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, ratings_path) from None
        if uid_i not in user_map:
            raise ParseError(f"unknown user {uid_i}", lineno, ratings_path)
        if mid_i not in movie_map:
            raise ParseError(f"unknown movie {mid_i}", lineno, ratings_path)
        if not 1 <= r <= 5:
            raise ParseError(f"rating {r} outside 1..5", lineno, ratings_path)
        u_idx.append(user_map[uid_i])
        m_idx.append(movie_map[mid_i])
        ratings.append(float(r))

    u = np.array(u_idx, dtype=np.int64)
    m = np.array(m_idx, dtype=np.int64)
    n = len(u)
    cat = np.empty((n, 5), dtype=np.int64)
    cat[:, 0] = u
    if n:
        cat[:, 1:4] = users_arr[u]
    cat[:, 4] = m
    num = genres_arr[m] if n else np.zeros((0, len(ML_GENRES)))
    schema = FeatureSchema(
        categorical=ML_CATEGORICAL,
        vocab_sizes=(max(len(user_map), 1), 2, len(ML_AGES), ML_OCCUPATIONS, max(len(movie_map), 1)),
        n_numeric=len(ML_GENRES),
        task_kind="regression",
        id_maps={"user_id": user_map, "movie_id": movie_map},
    )
    return Dataset(schema, cat, np.ascontiguousarray(num, dtype=np.float64),
                   np.array(ratings, dtype=np.float64), np.arange(n, dtype=np.int64),
                   {"source": "movielens", "path": str(ratings_path), "split_name": "all",
                    "parent_seed": None})


def load_movielens_dir(directory) -> Dataset:
    d = Path(directory)
    return load_movielens(d / "ratings.dat", d / "users.dat", d / "movies.dat")


def write_synthetic_movielens(out_dir, n_ratings: int = 100_000, n_users: int = 1500,
                              n_movies: int = 1200, seed: int = 0) -> Path:
    """Write ml-1m-format files whose ratings come from a latent-factor model.

    User activity and movie popularity are long-tailed, so many ids are seen
    only a handful of times, which is where independently trained models
    disagree most.
    """
    if n_ratings <= 0 or n_users <= 0 or n_movies <= 0:
        raise ConfigurationError("synthetic MovieLens sizes must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = keyed_generator(seed, "synthetic-movielens")

    genders = g.choice(["M", "F"], size=n_users, p=[0.7, 0.3])
    age_codes = g.choice(len(ML_AGES), size=n_users, p=[0.04, 0.18, 0.35, 0.2, 0.09, 0.08, 0.06])
    occupations = g.integers(0, ML_OCCUPATIONS, size=n_users)
    n_genre = g.choice([1, 2, 3], size=n_movies, p=[0.5, 0.35, 0.15])
    genre_sets = [np.sort(g.choice(len(ML_GENRES), size=k, replace=False)) for k in n_genre]

    dim = 4
    user_f = g.normal(0, 0.45, size=(n_users, dim))
    movie_f = g.normal(0, 0.45, size=(n_movies, dim))
    user_b = g.normal(0, 0.35, size=n_users)
    movie_b = g.normal(0, 0.45, size=n_movies)
    genre_age = g.normal(0, 0.25, size=(len(ML_GENRES), len(ML_AGES)))
    genre_gender = g.normal(0, 0.2, size=(len(ML_GENRES), 2))

    user_w = 1.0 / np.arange(1, n_users + 1) ** 0.85
    movie_w = 1.0 / np.arange(1, n_movies + 1) ** 1.0
    user_w = g.permutation(user_w / user_w.sum())
    movie_w = g.permutation(movie_w / movie_w.sum())

    pairs: dict[tuple[int, int], None] = {}
    while len(pairs) < n_ratings:
        need = int((n_ratings - len(pairs)) * 1.2) + 16
        us = g.choice(n_users, size=need, p=user_w)
        ms = g.choice(n_movies, size=need, p=movie_w)
        for a, b in zip(us.tolist(), ms.tolist()):
            pairs.setdefault((a, b), None)
            if len(pairs) >= n_ratings:
                break
    pu = np.array([p[0] for p in pairs], dtype=np.int64)
    pm = np.array([p[1] for p in pairs], dtype=np.int64)

    gender_i = (genders == "F").astype(np.int64)
    score = 3.55 + user_b[pu] + movie_b[pm] + np.einsum("ij,ij->i", user_f[pu], movie_f[pm])
    genre_effect = np.array([
        genre_age[gs, age_codes[u]].mean() + genre_gender[gs, gender_i[u]].mean()
        for gs, u in zip((genre_sets[m] for m in pm), pu)
    ])
    score = score + genre_effect + g.normal(0, 0.85, size=n_ratings)
    ratings = np.clip(np.rint(score), 1, 5).astype(int)
    timestamps = 956703932 + np.sort(g.integers(0, 90_000_000, size=n_ratings))

    with open(out / "users.dat", "w", encoding="latin-1") as fh:
        for u in range(n_users):
            fh.write(f"{u + 1}::{genders[u]}::{ML_AGES[age_codes[u]]}::{occupations[u]}::{10000 + u}\n")
    with open(out / "movies.dat", "w", encoding="latin-1") as fh:
        for m in range(n_movies):
            genres = "|".join(ML_GENRES[i] for i in genre_sets[m])
            fh.write(f"{m + 1}::Synthetic Movie {m + 1} (2000)::{genres}\n")
    with open(out / "ratings.dat", "w", encoding="latin-1") as fh:
        for k in range(n_ratings):
            fh.write(f"{pu[k] + 1}::{pm[k] + 1}::{ratings[k]}::{timestamps[k]}\n")
    return out


# ----------------------------------------------------------- synthetic binary


def default_cardinalities() -> list[int]:
    return [int(round(v)) for v in np.geomspace(3, 400, 26)]


def gen_synthetic_binary(n_rows: int, n_numeric: int = 13,
                         cat_cardinalities: Sequence[int] | None = None,
                         seed: int = 0) -> Dataset:
    """Click-through-style binary data from a hidden sparse logistic model.

    Numeric columns are heavy-tailed counts passed through ``log1p``;
    categorical ids follow Zipf-like frequencies. Only a few columns carry
    signal, and label noise keeps the task from being separable.
    """
    if n_rows <= 0:
        raise ConfigurationError("n_rows must be positive")
    cards = list(cat_cardinalities) if cat_cardinalities is not None else default_cardinalities()
    if any(c <= 0 for c in cards):
        raise ConfigurationError("categorical cardinalities must be positive")
    g = keyed_generator(seed, "synthetic-binary")
    scale = g.gamma(1.5, 2.0, size=n_numeric)
    counts = g.poisson(scale * g.gamma(0.8, 1.0, size=(n_rows, n_numeric)))
    num = np.log1p(counts.astype(np.float64))

    cat = np.empty((n_rows, len(cards)), dtype=np.int64)
    for j, c in enumerate(cards):
        w = 1.0 / np.arange(1, c + 1) ** 1.1
        cat[:, j] = g.choice(c, size=n_rows, p=w / w.sum())

    n_sig_num = min(4, n_numeric)
    num_idx = g.choice(n_numeric, size=n_sig_num, replace=False) if n_numeric else np.array([], int)
    num_w = g.normal(0, 0.8, size=n_sig_num)
    n_sig_cat = min(6, len(cards))
    cat_idx = g.choice(len(cards), size=n_sig_cat, replace=False) if cards else np.array([], int)
    logit = np.full(n_rows, -0.6)
    if n_sig_num:
        centred = num[:, num_idx] - num[:, num_idx].mean(axis=0)
        logit += centred @ num_w
    for j in cat_idx:
        effects = g.normal(0, 0.9, size=cards[j])
        logit += effects[cat[:, j]]
    if n_sig_num >= 2 and n_sig_cat >= 1:
        logit += 0.5 * np.tanh(num[:, num_idx[0]] - 1.0) * (cat[:, cat_idx[0]] % 2)
    logit += g.normal(0, 0.5, size=n_rows)
    labels = (g.random(n_rows) < 1.0 / (1.0 + np.exp(-logit))).astype(np.float64)

    schema = FeatureSchema(
        categorical=tuple(f"c{j + 1}" for j in range(len(cards))),
        vocab_sizes=tuple(cards),
        n_numeric=n_numeric,
        task_kind="binary",
    )
    return Dataset(schema, cat, num, labels, np.arange(n_rows, dtype=np.int64),
                   {"source": "synthetic-binary", "split_name": "all", "parent_seed": seed})


# ------------------------------------------------------------ splitting etc.


def split(dataset: Dataset, fractions: Sequence[float], seed: int,
          names: Sequence[str] | None = None) -> list[Dataset]:
    """Seeded permutation followed by contiguous cuts.

    Each part keeps the permuted order, so a part's natural order is already
    decorrelated from the source file order.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise ConfigurationError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions sum to {sum(fractions)!r}, not 1")
    n = len(dataset)
    perm = keyed_generator(seed, "split").permutation(n)
    bounds = np.rint(np.cumsum([0.0] + fractions) * n).astype(int)
    bounds[-1] = n
    names = list(names) if names is not None else [f"part{i}" for i in range(len(fractions))]
    return [
        dataset.take(perm[bounds[i]:bounds[i + 1]], split_name=names[i], parent_seed=seed)
        for i in range(len(fractions))
    ]


def shuffle_epoch(dataset_size: int, base_seed: int | None, epoch_index: int) -> np.ndarray:
    """Example order for one epoch; ``base_seed=None`` means shuffling is off."""
    if dataset_size <= 0:
        raise ConfigurationError("dataset_size must be positive")
    if base_seed is None:
        return np.arange(dataset_size)
    return keyed_generator(base_seed, "shuffle", epoch_index).permutation(dataset_size)


def jackknife_folds(dataset: Dataset, K: int, seed: int = 0) -> np.ndarray:
    """Fold index per row: rows ranked by a keyed hash of row_id, dealt round-robin."""
    if K < 1 or K > len(dataset):
        raise ConfigurationError(f"need 1 <= K <= {len(dataset)}, got K={K}")
    order = np.argsort(hash_uint64(seed, "jackknife", dataset.row_ids), kind="stable")
    folds = np.empty(len(dataset), dtype=np.int64)
    folds[order] = np.arange(len(dataset)) % K
    return folds


def jackknife_subsample(dataset: Dataset, K: int, leave_out_index: int, seed: int = 0) -> Dataset:
    if not 0 <= leave_out_index < K:
        raise ConfigurationError(f"leave_out_index {leave_out_index} outside [0, {K})")
    folds = jackknife_folds(dataset, K, seed)
    keep = np.flatnonzero(folds != leave_out_index)
    return dataset.take(keep, jackknife=f"{leave_out_index}/{K}")


# ------------------------------------------------------------ canonical dump


def dump_dataset(dataset: Dataset, path) -> None:
    """Tab-separated dump: one row per example, exact float round trip."""
    schema = dataset.schema
    cols = ["row_id"] + [f"cat:{c}" for c in schema.categorical]
    cols += [f"num:{i}" for i in range(schema.n_numeric)] + ["label"]
    meta = {"schema": schema.to_dict(), "provenance": _jsonable(dataset.provenance)}
    lines = [DUMP_HEADER, "# " + json.dumps(meta, sort_keys=True), "\t".join(cols)]
    label_fmt = "{:d}" if schema.task_kind == "multiclass" else "{!r}"
    for i in range(len(dataset)):
        fields = [str(int(dataset.row_ids[i]))]
        fields += [str(int(v)) for v in dataset.cat[i]]
        fields += [repr(float(v)) for v in dataset.num[i]]
        lab = dataset.labels[i]
        fields.append(label_fmt.format(int(lab) if schema.task_kind == "multiclass" else float(lab)))
        lines.append("\t".join(fields))
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != DUMP_HEADER:
            raise ParseError(f"not a dataset dump (header {first!r})", 1, path)
        meta = json.loads(fh.readline()[2:])
        fh.readline()
        body = fh.read()
    schema = FeatureSchema.from_dict(meta["schema"])
    k, d = len(schema.categorical), schema.n_numeric
    rows = [line.split("\t") for line in body.splitlines() if line]
    for lineno, r in enumerate(rows, start=4):
        if len(r) != 2 + k + d:
            raise ParseError(f"expected {2 + k + d} fields, got {len(r)}", lineno, path)
    n = len(rows)
    row_ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    cat = np.array([[int(v) for v in r[1:1 + k]] for r in rows], dtype=np.int64).reshape(n, k)
    num = np.array([[float(v) for v in r[1 + k:1 + k + d]] for r in rows], dtype=np.float64).reshape(n, d)
    if schema.task_kind == "multiclass":
        labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    else:
        labels = np.array([float(r[-1]) for r in rows], dtype=np.float64)
    return Dataset(schema, cat, num, labels, row_ids, meta.get("provenance", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
