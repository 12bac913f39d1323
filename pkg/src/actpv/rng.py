"""Counter-based random streams.

Every random draw in the package is keyed by ``(seed, purpose, index...)``
so that the value of one stream never depends on how many draws some other
stream has made. Two helpers cover the two access patterns:

* :func:`keyed_generator` returns a numpy ``Generator`` on a Philox stream
  for bulk draws (parameter tensors, permutations).
* :func:`hash_uniform` maps integer counters to uniforms in ``[0, 1)`` with a
  vectorised splitmix64, for per-row decisions that must be stable under
  re-ordering (validation carve-outs, fold assignment).
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def purpose_code(purpose: str) -> int:
    """Stable 64-bit code for a purpose string (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def keyed_generator(seed: int, purpose: str, *index: int) -> np.random.Generator:
    words = [int(seed) & _MASK64, purpose_code(purpose)] + [int(i) & _MASK64 for i in index]
    ss = np.random.SeedSequence(words)
    return np.random.Generator(np.random.Philox(ss))


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def hash_uint64(seed: int, purpose: str, counters) -> np.ndarray:
    counters = np.asarray(counters).astype(np.uint64)
    key = np.uint64((int(seed) * 0x2545F4914F6CDD1D + purpose_code(purpose)) & _MASK64)
    with np.errstate(over="ignore"):
        return _splitmix64(_splitmix64(counters ^ key) + key)


def hash_uniform(seed: int, purpose: str, counters) -> np.ndarray:
    """Uniform floats in [0, 1) from 53 high bits of a keyed hash."""
    h = hash_uint64(seed, purpose, counters)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def derive_seeds(master_seed: int, purpose: str, n: int) -> list[int]:
    """``n`` distinct 63-bit seeds derived from a master seed."""
    out: list[int] = []
    seen: set[int] = set()
    counter = 0
    while len(out) < n:
        value = int(hash_uint64(master_seed, purpose, [counter])[0]) >> 1
        counter += 1
        if value not in seen:
            seen.add(value)
            out.append(value)
    return out
