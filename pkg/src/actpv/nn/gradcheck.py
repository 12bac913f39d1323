from __future__ import annotations

import numpy as np

from .engine import batch_loss, forward_batch, loss_and_grad
from .params import ModelParams
from .spec import ModelSpec


def numeric_grad(spec: ModelSpec, params: ModelParams, cat, num, y, epsilon: float):
    """Central finite differences of the mean batch loss for every parameter entry."""
    out = {}
    for name, arr in params.arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up, _ = batch_loss(forward_batch(spec, params, cat, num).out, y, spec)
            flat[i] = orig - epsilon
            down, _ = batch_loss(forward_batch(spec, params, cat, num).out, y, spec)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * epsilon)
        out[name] = g
    return out


def grad_check(spec: ModelSpec, params: ModelParams, cat, num, y, epsilon: float = 1e-6,
               tolerance: float = 1e-4, gradient_fn=None) -> float:
    """Largest relative error between analytic and finite-difference gradients.

    Relative error is ``|a - n| / max(|a| + |n|, 1e-8)``. ``gradient_fn`` can
    replace the analytic gradient (used to test the check itself).
    """
    params = params.copy()
    cat = np.asarray(cat, dtype=np.int64)
    num = np.asarray(num, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if gradient_fn is None:
        _, analytic = loss_and_grad(spec, params, cat, num, y)
    else:
        analytic = gradient_fn(spec, params, cat, num, y)
    numeric = numeric_grad(spec, params, cat, num, y, epsilon)
    worst = 0.0
    for name in params.names():
        a, n = analytic[name], numeric[name]
        rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst
