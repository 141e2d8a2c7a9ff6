"""Differentiable operations used by the models in this package.

Each op builds one tape node. The set is deliberately small: dense linear
algebra, the activations named by the architectures here, the two losses,
and the gather/scatter/segment primitives behind message passing.
"""

import numpy as np

from .. import kernels
from .tensor import Tensor, const


def _as_tensor(x):
    return x if isinstance(x, Tensor) else const(x)


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.shape[-1] != b.value.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    out = a.value @ b.value

    def bwd(g, guided):
        return g @ b.value.T, a.value.T @ g

    return Tensor(out, (a, b), bwd)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.value + b.value

    def bwd(g, guided):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Tensor(out, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.value * b.value

    def bwd(g, guided):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Tensor(out, (a, b), bwd)


def linear(x, w, b=None):
    """x @ w + b, with b broadcast over rows."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def relu(x):
    x = _as_tensor(x)
    mask = x.value > 0

    def bwd(g, guided):
        if guided:
            g = np.where(g > 0, g, 0.0)
        return (g * mask,)

    return Tensor(np.where(mask, x.value, 0.0), (x,), bwd)


def leaky_relu(x, slope=0.2):
    x = _as_tensor(x)
    mask = x.value > 0

    def bwd(g, guided):
        return (g * np.where(mask, 1.0, slope),)

    return Tensor(np.where(mask, x.value, slope * x.value), (x,), bwd)


def softmax_rows(x):
    x = _as_tensor(x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, guided):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return Tensor(y, (x,), bwd)


def sum_all(x):
    x = _as_tensor(x)

    def bwd(g, guided):
        return (np.full_like(x.value, float(g)),)

    return Tensor(x.value.sum(), (x,), bwd)


def mean_rows(x):
    """Columnwise mean, keeping a single row: (n, d) -> (1, d)."""
    x = _as_tensor(x)
    n = x.value.shape[0]
    if n == 0:
        raise ValueError("empty graph: cannot take mean over zero rows")

    def bwd(g, guided):
        return (np.broadcast_to(g / n, x.value.shape).copy(),)

    return Tensor(x.value.mean(axis=0, keepdims=True), (x,), bwd)


def reshape(x, shape):
    x = _as_tensor(x)
    orig = x.value.shape

    def bwd(g, guided):
        return (g.reshape(orig),)

    return Tensor(x.value.reshape(shape), (x,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g, guided):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), bwd)


def slice_cols(x, lo, hi):
    x = _as_tensor(x)

    def bwd(g, guided):
        full = np.zeros_like(x.value)
        full[:, lo:hi] = g
        return (full,)

    return Tensor(x.value[:, lo:hi].copy(), (x,), bwd)


def gather_rows(x, index):
    """Pull rows: (n, d) -> (k, d) at integer index (k,)."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.value.shape[0]

    def bwd(g, guided):
        return (kernels.scatter_add_rows(g, index, n),)

    return Tensor(x.value[index], (x,), bwd)


def scatter_rows(x, index, num_rows):
    """Push rows: sum (k, d) rows into (num_rows, d) at integer index (k,)."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def bwd(g, guided):
        return (g[index],)

    return Tensor(kernels.scatter_add_rows(x.value, index, num_rows), (x,), bwd)


def segment_softmax(scores, segments, num_segments):
    """Softmax of scores within each segment (per-neighborhood attention)."""
    scores = _as_tensor(scores)
    segments = np.asarray(segments, dtype=np.int64)
    flat = scores.value.ravel()
    alpha = kernels.segment_softmax(flat, segments, num_segments)

    def bwd(g, guided):
        gf = g.ravel()
        inner = kernels.segment_sum(alpha * gf, segments, num_segments)
        return ((alpha * (gf - inner[segments])).reshape(scores.value.shape),)

    return Tensor(alpha.reshape(scores.value.shape), (scores,), bwd)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    return mul(x, const(mask))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Stabilized with log-sum-exp; gradient wrt logits is softmax - onehot.
    """
    logits = _as_tensor(logits)
    z = logits.value
    if z.ndim != 2:
        raise ValueError(f"logits must be 2-D, got shape {z.shape}")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.shape[0] != z.shape[0]:
        raise ValueError("logits/labels length mismatch")
    rows = np.arange(z.shape[0])
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    loss = (lse - z[rows, labels]).mean()

    def bwd(g, guided):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (float(g) / z.shape[0]),)

    return Tensor(loss, (logits,), bwd)


def mse(pred, target):
    """Mean over rows of squared Euclidean distance to ``target``."""
    pred = _as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.value.shape} vs {target.shape}")
    rows = pred.value.shape[0] if pred.value.ndim == 2 else 1
    diff = pred.value - target

    def bwd(g, guided):
        return (diff * (2.0 * float(g) / rows),)

    return Tensor((diff * diff).sum() / rows, (pred,), bwd)
