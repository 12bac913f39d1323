"""Forward and backward passes for the embedding + ReLU MLP.

Batches are ``(cat, num)`` pairs: an integer id matrix with one column per
embedding and a float matrix of dense inputs. Everything is float64 and
evaluated in a fixed order, so identical inputs give identical bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .params import ModelParams
from .spec import ModelSpec


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits, temperature: float = 1.0):
    s = np.asarray(logits, dtype=np.float64) / temperature
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(s):
    m = s.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(s - m).sum(axis=-1, keepdims=True)))[..., 0]


def head_output(out: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Map raw head values to predictions (value, probability, or distribution)."""
    if spec.task_kind == "regression":
        pred = out[:, 0]
        if spec.output_clamp is not None:
            pred = np.clip(pred, *spec.output_clamp)
        return pred
    if spec.task_kind == "binary":
        return sigmoid(out[:, 0])
    return softmax(out, spec.temperature)


def loss(pred_internal, label, task_kind: str, temperature: float = 1.0) -> float:
    """Per-example loss from the head's raw output.

    ``pred_internal`` is the predicted value (regression), the logit (binary)
    or the logit vector (multiclass; scaled by ``1/temperature`` first).
    """
    if task_kind == "regression":
        if not np.isfinite(label):
            raise InputError("regression label must be finite")
        return float((float(pred_internal) - float(label)) ** 2)
    if task_kind == "binary":
        if label not in (0, 1):
            raise InputError(f"binary label must be 0 or 1, got {label!r}")
        z = float(pred_internal)
        return float(np.logaddexp(0.0, z) - label * z)
    logits = np.asarray(pred_internal, dtype=np.float64)
    if int(label) != label or not 0 <= label < logits.shape[-1]:
        raise InputError(f"class label {label!r} outside [0, {logits.shape[-1]})")
    s = logits / temperature
    return float(logsumexp(s[None, :])[0] - s[int(label)])


def batch_loss(out: np.ndarray, y: np.ndarray, spec: ModelSpec) -> tuple[float, np.ndarray]:
    """Mean loss over a batch and its gradient w.r.t. the raw head output."""
    b = out.shape[0]
    if spec.task_kind == "regression":
        z = out[:, 0]
        pred = z
        live = None
        if spec.output_clamp is not None:
            lo, hi = spec.output_clamp
            pred = np.clip(z, lo, hi)
            live = (z > lo) & (z < hi)
        diff = pred - y
        dz = (2.0 / b) * diff
        if live is not None:
            dz = dz * live
        return float(np.dot(diff, diff) / b), dz[:, None]
    if spec.task_kind == "binary":
        z = out[:, 0]
        per = np.logaddexp(0.0, z) - y * z
        return float(per.sum() / b), ((sigmoid(z) - y) / b)[:, None]
    t = spec.temperature
    s = out / t
    lse = logsumexp(s)
    yi = y.astype(np.int64)
    rows = np.arange(b)
    per = lse - s[rows, yi]
    ds = np.exp(s - lse[:, None])
    ds[rows, yi] -= 1.0
    return float(per.sum() / b), ds / (t * b)


@dataclass
class ForwardCache:
    x0: np.ndarray
    pre: list
    post: list
    masks: list
    out: np.ndarray


def embed(spec: ModelSpec, params: ModelParams, cat, num) -> np.ndarray:
    cat = np.asarray(cat, dtype=np.int64)
    num = np.asarray(num, dtype=np.float64)
    n = num.shape[0] if num.ndim == 2 else cat.shape[0]
    if cat.shape != (n, len(spec.embedding_specs)) or num.shape != (n, spec.n_numeric):
        raise InputError(
            f"inputs of shape {cat.shape} / {num.shape} do not match the model schema")
    parts = []
    for j, e in enumerate(spec.embedding_specs):
        ids = cat[:, j]
        if n and (ids.min() < 0 or ids.max() >= e.vocab_size):
            raise InputError(f"{e.name} id outside [0, {e.vocab_size})")
        parts.append(params[f"emb.{e.name}"][ids])
    if spec.n_numeric:
        parts.append(num)
    return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0].copy()


def dropout_masks(spec: ModelSpec, n: int, rng: np.random.Generator) -> list:
    """Inverted-dropout masks, one per hidden layer, already scaled by 1/keep."""
    keep = 1.0 - spec.dropout_rate
    return [(rng.random((n, h)) < keep) / keep for h in spec.hidden_sizes]


def forward_batch(spec: ModelSpec, params: ModelParams, cat, num, *,
                  masks=None) -> ForwardCache:
    x = embed(spec, params, cat, num)
    x0 = x
    pre, post = [], []
    for i in range(len(spec.hidden_sizes)):
        z = x @ params[f"hidden.{i}.weight"] + params[f"hidden.{i}.bias"]
        h = np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
        x = h * masks[i] if masks is not None else h
    out = x @ params["head.weight"] + params["head.bias"]
    return ForwardCache(x0, pre, post, masks, out)


def backward(spec: ModelSpec, params: ModelParams, cache: ForwardCache, cat,
             dout: np.ndarray) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    n_layers = len(spec.hidden_sizes)
    last = cache.post[-1] if cache.masks is None else cache.post[-1] * cache.masks[-1]
    grads["head.weight"] = last.T @ dout
    grads["head.bias"] = dout.sum(axis=0)
    dx = dout @ params["head.weight"].T
    for i in reversed(range(n_layers)):
        if cache.masks is not None:
            dx = dx * cache.masks[i]
        dz = dx * (cache.pre[i] > 0)
        inp = cache.x0 if i == 0 else (
            cache.post[i - 1] if cache.masks is None else cache.post[i - 1] * cache.masks[i - 1])
        grads[f"hidden.{i}.weight"] = inp.T @ dz
        grads[f"hidden.{i}.bias"] = dz.sum(axis=0)
        dx = dz @ params[f"hidden.{i}.weight"].T
    offset = 0
    cat = np.asarray(cat, dtype=np.int64)
    emb_grads = {}
    for j, e in enumerate(spec.embedding_specs):
        g = np.zeros((e.vocab_size, e.dim))
        np.add.at(g, cat[:, j], dx[:, offset:offset + e.dim])
        emb_grads[f"emb.{e.name}"] = g
        offset += e.dim
    ordered = {}
    for name in params.names():
        ordered[name] = emb_grads[name] if name in emb_grads else grads[name]
    return ordered


def loss_and_grad(spec: ModelSpec, params: ModelParams, cat, num, y, *, masks=None):
    cache = forward_batch(spec, params, cat, num, masks=masks)
    value, dout = batch_loss(cache.out, np.asarray(y, dtype=np.float64), spec)
    return value, backward(spec, params, cache, cat, dout)


def raw_outputs(spec: ModelSpec, params: ModelParams, cat, num, *, chunk: int = 8192,
                capture: bool = False, dropout_rng: np.random.Generator | None = None):
    """Raw head outputs (and optionally post-ReLU activations) in chunks."""
    n = np.asarray(num).shape[0]
    outs, acts = [], []
    for s in range(0, max(n, 1), chunk):
        c, x = cat[s:s + chunk], num[s:s + chunk]
        masks = dropout_masks(spec, len(x), dropout_rng) if dropout_rng is not None else None
        cache = forward_batch(spec, params, c, x, masks=masks)
        outs.append(cache.out)
        if capture:
            acts.append(np.concatenate(cache.post, axis=1))
    out = np.concatenate(outs, axis=0)[:n]
    if capture:
        return out, np.concatenate(acts, axis=0)[:n]
    return out


def predict(spec: ModelSpec, params: ModelParams, cat, num, *,
            dropout_rng: np.random.Generator | None = None) -> np.ndarray:
    """Predictions for a batch: shape ``(n,)`` or ``(n, C)`` for multiclass."""
    return head_output(raw_outputs(spec, params, cat, num, dropout_rng=dropout_rng), spec)


def capture_activations(spec: ModelSpec, params: ModelParams, cat, num) -> np.ndarray:
    """Raw post-ReLU outputs of every hidden neuron, layers concatenated in order."""
    return raw_outputs(spec, params, cat, num, capture=True)[1]


def forward(params: ModelParams, spec: ModelSpec, example, capture: bool = False):
    """Single-example forward pass.

    Returns ``(prediction, activations)``; ``activations`` is ``None`` unless
    ``capture`` is set.
    """
    cat = np.array([[example.categorical[e.name] for e in spec.embedding_specs]], dtype=np.int64)
    num = np.asarray(example.numeric, dtype=np.float64).reshape(1, -1)
    cache = forward_batch(spec, params, cat, num)
    pred = head_output(cache.out, spec)[0]
    pred = float(pred) if spec.task_kind != "multiclass" else pred
    acts = np.concatenate(cache.post, axis=1)[0] if capture else None
    return pred, acts
