"""Parameter containers, initialisation and the model artifact file."""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, InputError
from ..rng import keyed_generator
from .spec import ModelSpec

ARTIFACT_VERSION = 1


@dataclass(eq=False)
class ModelParams:
    """Named parameter arrays in a fixed order (embeddings, hidden layers, head)."""

    arrays: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def freeze(self) -> "ModelParams":
        for v in self.arrays.values():
            v.setflags(write=False)
        return self

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of every array."""
        if self.names() != other.names():
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays.values(), other.arrays.values())
        )

    def check(self, spec: ModelSpec) -> None:
        shapes = spec.param_shapes()
        if list(shapes) != self.names():
            raise ConfigurationError("parameter names do not match the model spec")
        for name, shape in shapes.items():
            if self.arrays[name].shape != shape:
                raise ConfigurationError(
                    f"{name} has shape {self.arrays[name].shape}, spec expects {shape}")

    @property
    def n_values(self) -> int:
        return sum(v.size for v in self.arrays.values())


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Glorot-style uniform weights, zero biases.

    Each tensor draws from its own stream keyed by ``(seed, parameter name)``,
    so adding or reordering layers never changes another tensor's values.
    """
    arrays: dict[str, np.ndarray] = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
            continue
        fan_in, fan_out = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = keyed_generator(seed, f"init:{name}").uniform(-limit, limit, size=shape)
    return ModelParams(arrays)


def save_model(path, spec: ModelSpec, params: ModelParams, seeds: dict | None = None,
               extra: dict | None = None) -> None:
    """Write spec, params and seeds to one ``.npz``; float64 arrays round-trip exactly."""
    meta = {
        "format": "actpv-model",
        "version": ARTIFACT_VERSION,
        "spec": spec.to_dict(),
        "seeds": seeds or {},
        "extra": extra or {},
        "order": params.names(),
    }
    payload = {f"p/{k}": v for k, v in params.arrays.items()}
    payload["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_model(path) -> tuple[ModelSpec, ModelParams, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != "actpv-model":
            raise InputError(f"{path} is not a model artifact")
        if meta["version"] != ARTIFACT_VERSION:
            raise InputError(f"unsupported model artifact version {meta['version']}")
        arrays = {k: np.array(z[f"p/{k}"]) for k in meta["order"]}
    spec = ModelSpec.from_dict(meta["spec"])
    params = ModelParams(arrays)
    params.check(spec)
    return spec, params, {"seeds": meta["seeds"], "extra": meta["extra"]}
