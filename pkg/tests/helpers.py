"""Independent oracles used by the test-suite.

Nothing here calls into the engine's differentiable primitives; every
reference is written with plain loops or plain numpy so that it can check
the engine rather than echo it.
"""

import math

import numpy as np

from timeformer.tensor import Tensor, no_grad


def numeric_grad(loss_fn, tensors, step=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every tensor in place."""
    grads = []
    with no_grad():
        for t in tensors:
            g = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * step)
            grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


def gradcheck(fn, tensors, seed=0, step=1e-5):
    """Compare backward() with finite differences on ``sum(fn() * R)`` for a fixed random ``R``.

    ``fn`` is a zero-argument closure over ``tensors`` (leaf tensors that track
    gradients). Returns the max relative error.
    """
    rng = np.random.default_rng(seed)
    probe = fn()
    weights = Tensor(rng.standard_normal(probe.shape))

    def loss_fn():
        return (fn() * weights).sum()

    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    numeric = numeric_grad(loss_fn, tensors, step)
    return max_rel_error(analytic, numeric)


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def naive_conv1d(x, w, b):
    """Direct summation, zero padding of (k-1)/2 each side. x [L, C_in], w [k, C_in, C_out]."""
    length, c_in = x.shape
    k, _, c_out = w.shape
    pad = (k - 1) // 2
    out = np.zeros((length, c_out))
    for t in range(length):
        for o in range(c_out):
            s = b[o]
            for j in range(k):
                src = t + j - pad
                if 0 <= src < length:
                    for c in range(c_in):
                        s += x[src, c] * w[j, c, o]
            out[t, o] = s
    return out


def naive_softmax_row(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def reference_attention_block(x, w_q, w_k, w_v, w_o, bn_weight, bn_bias, num_heads, eps=1e-6,
                              training=True, running_mean=None, running_var=None):
    """Standard post-norm multi-head self-attention written with explicit loops over batch and head."""
    b, t, d_model = x.shape
    d = d_model // num_heads
    heads_out = np.zeros((b, t, num_heads * d))
    for bi in range(b):
        for h in range(num_heads):
            cols = slice(h * d, (h + 1) * d)
            q = x[bi] @ w_q[:, cols]
            k = x[bi] @ w_k[:, cols]
            v = x[bi] @ w_v[:, cols]
            for i in range(t):
                scores = [float(np.dot(q[i], k[j])) / math.sqrt(d) for j in range(t)]
                weights = naive_softmax_row(scores)
                acc = np.zeros(d)
                for j in range(t):
                    acc += weights[j] * v[j]
                heads_out[bi, i, cols] = acc
    y = x + heads_out @ w_o
    flat = y.reshape(-1, d_model)
    if training:
        mean = flat.mean(axis=0)
        var = ((flat - mean) ** 2).mean(axis=0)
    else:
        mean, var = running_mean, running_var
    return ((y - mean) / np.sqrt(var + eps)) * bn_weight + bn_bias


def etth1_path():
    """Location of the public ETTh1 CSV, or None when it is not available locally."""
    import os
    from pathlib import Path

    candidates = [os.environ.get("TIMEFORMER_ETTH1_CSV"), Path(__file__).parent / "data" / "ETTh1.csv"]
    for c in candidates:
        if c and Path(c).is_file():
            return Path(c)
    return None
