"""Ensembles trained under controlled randomness sources.

Three sources can be switched on independently: Shuffle (per-member epoch
order), RandInit (per-member initialisation seed) and Jackknife (each member
leaves out one of N folds). The eight combinations are coded R0..R7.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, jackknife_subsample
from .errors import ConfigurationError, InputError, TrainingError
from .nn import ModelParams, ModelSpec, TrainConfig, load_model, predict, save_model, train
from .nn.train import TrainingHistory
from .rng import derive_seeds

MANIFEST_FORMAT = "actpv-ensemble"
MANIFEST_VERSION = 1
SETTING_NAMES = ("None", "R", "S", "R+S", "J", "R+J", "S+J", "R+S+J")


@dataclass(frozen=True)
class RandomnessSetting:
    rand_init: bool = False
    shuffle: bool = False
    jackknife: bool = False

    @property
    def index(self) -> int:
        return int(self.rand_init) + 2 * int(self.shuffle) + 4 * int(self.jackknife)

    @property
    def code(self) -> str:
        return f"R{self.index}"

    @property
    def label(self) -> str:
        return f"({self.code}) {SETTING_NAMES[self.index]}"

    @classmethod
    def from_code(cls, code: str) -> "RandomnessSetting":
        code = code.strip().upper()
        if len(code) != 2 or code[0] != "R" or code[1] not in "01234567":
            raise ConfigurationError(f"unknown randomness setting {code!r}; expected R0..R7")
        i = int(code[1])
        return cls(rand_init=bool(i & 1), shuffle=bool(i & 2), jackknife=bool(i & 4))

    @classmethod
    def all(cls) -> list["RandomnessSetting"]:
        return [cls.from_code(f"R{i}") for i in range(8)]


@dataclass(frozen=True)
class SeedBundle:
    init_seed: int
    shuffle_seed: int | None = None
    jackknife_index: int | None = None
    jackknife_k: int | None = None
    dropout_seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "init_seed": self.init_seed,
            "shuffle_seed": self.shuffle_seed,
            "jackknife_index": self.jackknife_index,
            "jackknife_k": self.jackknife_k,
            "dropout_seed": self.dropout_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeedBundle":
        return cls(**d)


def global_init_seed(master_seed: int) -> int:
    """The single init seed shared by all members when RandInit is off."""
    return derive_seeds(master_seed, "global-init", 1)[0]


def make_seed_bundles(setting: RandomnessSetting, N: int, master_seed: int) -> list[SeedBundle]:
    """Seeds for N members.

    The RandInit and Shuffle seed sets depend only on ``master_seed``, so
    member i gets the same init seed in every setting that has RandInit on.
    """
    if N < 1:
        raise ConfigurationError("ensemble size must be >= 1")
    if setting.rand_init:
        inits = derive_seeds(master_seed, "init", N)
    else:
        inits = [global_init_seed(master_seed)] * N
    shuffles = derive_seeds(master_seed, "shuffle", N) if setting.shuffle else [None] * N
    return [
        SeedBundle(
            init_seed=inits[i],
            shuffle_seed=shuffles[i],
            jackknife_index=i if setting.jackknife else None,
            jackknife_k=N if setting.jackknife else None,
        )
        for i in range(N)
    ]


@dataclass(eq=False)
class Ensemble:
    spec: ModelSpec
    config: TrainConfig
    setting: RandomnessSetting
    master_seed: int
    bundles: list[SeedBundle]
    members: list[ModelParams]
    histories: list[TrainingHistory] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.members)

    def subset(self, indices) -> "Ensemble":
        idx = [int(i) for i in indices]
        hist = [self.histories[i] for i in idx] if self.histories else []
        return Ensemble(self.spec, self.config, self.setting, self.master_seed,
                        [self.bundles[i] for i in idx], [self.members[i] for i in idx], hist)


@dataclass(eq=False)
class PredictionMatrix:
    """Member-by-example predictions: ``(N, n)`` or ``(N, n, C)`` for multiclass."""

    values: np.ndarray
    row_ids: np.ndarray
    task_kind: str

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def to_file(self, path) -> None:
        tmp = f"{path}.tmp.npz"
        np.savez(tmp, values=self.values, row_ids=self.row_ids,
                 task_kind=np.array(self.task_kind))
        os.replace(tmp, path)

    @classmethod
    def from_file(cls, path) -> "PredictionMatrix":
        with np.load(path, allow_pickle=False) as z:
            return cls(np.array(z["values"]), np.array(z["row_ids"]), str(z["task_kind"]))


def member_data(train_data: Dataset, bundle: SeedBundle, jackknife_seed: int = 0) -> Dataset:
    if bundle.jackknife_index is None:
        return train_data
    return jackknife_subsample(train_data, bundle.jackknife_k, bundle.jackknife_index, jackknife_seed)


def train_member(spec: ModelSpec, config: TrainConfig, train_data: Dataset, bundle: SeedBundle,
                 jackknife_seed: int = 0) -> tuple[ModelParams, TrainingHistory]:
    return train(spec, config, member_data(train_data, bundle, jackknife_seed), bundle)


def _train_member_job(args):
    i, spec, config, data, bundle, jk_seed = args
    try:
        return i, train_member(spec, config, data, bundle, jk_seed)
    except TrainingError as exc:
        raise TrainingError(str(exc), member=i) from exc


def train_ensemble(spec: ModelSpec, config: TrainConfig, train_data: Dataset,
                   setting: RandomnessSetting, N: int, master_seed: int, *,
                   workers: int = 1, jackknife_seed: int = 0) -> Ensemble:
    """Train N members; the result does not depend on ``workers``."""
    if N < 2:
        raise ConfigurationError("an ensemble needs at least two members")
    if setting.jackknife and N > len(train_data):
        raise ConfigurationError(f"{N} jackknife folds do not fit {len(train_data)} rows")
    bundles = make_seed_bundles(setting, N, master_seed)
    jobs = [(i, spec, config, train_data, b, jackknife_seed) for i, b in enumerate(bundles)]
    results: dict[int, tuple[ModelParams, TrainingHistory]] = {}
    if workers <= 1:
        for job in jobs:
            i, res = _train_member_job(job)
            results[i] = res
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, res in pool.map(_train_member_job, jobs):
                results[i] = res
    return Ensemble(spec, config, setting, master_seed, bundles,
                    [results[i][0].freeze() for i in range(N)],
                    [results[i][1] for i in range(N)])


def predict_matrix(ensemble: Ensemble, examples: Dataset) -> PredictionMatrix:
    spec = ensemble.spec
    if len(examples.schema.categorical) != len(spec.embedding_specs) or \
            examples.schema.n_numeric != spec.n_numeric:
        raise InputError("examples do not match the ensemble's model schema")
    rows = [predict(spec, p, examples.cat, examples.num) for p in ensemble.members]
    return PredictionMatrix(np.stack(rows), examples.row_ids.copy(), spec.task_kind)


# ------------------------------------------------------------- persistence


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_ensemble(ensemble: Ensemble, out_dir, extra: dict | None = None) -> Path:
    """Member artifacts plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    members = []
    for i, (bundle, params) in enumerate(zip(ensemble.bundles, ensemble.members)):
        name = f"member_{i:04d}.npz"
        save_model(out / name, ensemble.spec, params, bundle.to_dict())
        members.append({"index": i, "seeds": bundle.to_dict(), "artifact": name,
                        "sha256": file_sha256(out / name),
                        "history": ensemble.histories[i].to_dict() if ensemble.histories else None})
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "setting": ensemble.setting.code,
        "N": ensemble.N,
        "master_seed": ensemble.master_seed,
        "spec": ensemble.spec.to_dict(),
        "config": ensemble.config.to_dict(),
        "members": members,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise InputError(f"{path} is not an ensemble manifest")
    manifest["_dir"] = str(path.parent)
    return manifest


def load_ensemble(path) -> Ensemble:
    manifest = read_manifest(path)
    base = Path(manifest["_dir"])
    spec = ModelSpec.from_dict(manifest["spec"])
    members, bundles = [], []
    for m in manifest["members"]:
        mspec, params, _ = load_model(base / m["artifact"])
        if mspec != spec:
            raise InputError(f"member {m['index']} was trained with a different spec")
        members.append(params.freeze())
        bundles.append(SeedBundle.from_dict(m["seeds"]))
    return Ensemble(spec, TrainConfig.from_dict(manifest["config"]),
                    RandomnessSetting.from_code(manifest["setting"]),
                    manifest["master_seed"], bundles, members)
