"""Dense layers, segment max and scatter-add with hand-written backward passes.

Parameters live in one flat ``dict[str, ndarray]``; an MLP named ``prefix``
owns the keys ``{prefix}.{k}.W`` (in, out) and ``{prefix}.{k}.b`` (out,).
Every layer is followed by ReLU except the last, which is linear.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch

# He-uniform: keeps activation scale roughly constant through ReLU layers
INIT_GAIN = float(np.sqrt(6.0))


def mlp_init(params, rng, prefix, in_dim, widths, zero_last=False, gain=INIT_GAIN):
    """Uniform(-gain/sqrt(fan_in), gain/sqrt(fan_in)) weights and biases."""
    fan_in = in_dim
    for k, out in enumerate(widths):
        bound = gain / np.sqrt(fan_in)
        last = k == len(widths) - 1
        if last and zero_last:
            params[f"{prefix}.{k}.W"] = np.zeros((fan_in, out))
            params[f"{prefix}.{k}.b"] = np.zeros(out)
        else:
            params[f"{prefix}.{k}.W"] = rng.uniform(-bound, bound, size=(fan_in, out))
            params[f"{prefix}.{k}.b"] = rng.uniform(-bound, bound, size=out)
        fan_in = out


def mlp_forward(params, prefix, n_layers, x, keep=True, start=0):
    """Apply layers ``start .. n_layers-1``; returns ``(output, cache)``.

    ``x`` is the input of layer ``start``, or, when ``start > 0``, the
    pre-activation of layer ``start - 1`` (it gets its ReLU here).
    """
    cache = []
    h = np.maximum(x, 0.0) if start > 0 else x
    for k in range(start, n_layers):
        W = params[f"{prefix}.{k}.W"]
        if h.shape[-1] != W.shape[0]:
            raise DimensionMismatch(
                f"{prefix}.{k}: input width {h.shape[-1]} != weight rows {W.shape[0]}"
            )
        z = h @ W + params[f"{prefix}.{k}.b"]
        if keep:
            cache.append((k, h, z))
        h = np.maximum(z, 0.0) if k < n_layers - 1 else z
    return h, cache


def mlp_backward(params, prefix, cache, grad_out, grads, relu_input=False):
    """Accumulate weight gradients into ``grads``; return the gradient w.r.t. the MLP input.

    With ``relu_input`` the returned gradient is w.r.t. the pre-activation
    passed to a ``start > 0`` forward.
    """
    g = grad_out
    last = len(cache) - 1
    for pos in range(last, -1, -1):
        k, h, z = cache[pos]
        if pos < last:
            g = g * (z > 0)  # ReLU subgradient is 0 at 0
        _acc(grads, f"{prefix}.{k}.W", h.T @ g)
        _acc(grads, f"{prefix}.{k}.b", g.sum(axis=0))
        g = g @ params[f"{prefix}.{k}.W"].T
    if relu_input and cache:
        g = g * (cache[0][1] > 0)
    return g


def _acc(grads, key, value):
    if key in grads:
        grads[key] += value
    else:
        grads[key] = value


def segment_max(values, segment, n_segments):
    """Per-segment elementwise max of the rows of ``values``.

    Empty segments give zeros. Also returns, per (segment, channel), the
    row that won, ties going to the lowest row index; ``-1`` marks empty
    segments.
    """
    e, c = values.shape
    out = np.zeros((n_segments, c))
    arg = np.full((n_segments, c), -1, dtype=np.int64)
    if e == 0:
        return out, arg
    order = np.argsort(segment, kind="stable")
    seg_sorted = segment[order]
    starts = np.flatnonzero(np.r_[True, seg_sorted[1:] != seg_sorted[:-1]])
    segs = seg_sorted[starts]
    vals = values[order]
    best = np.maximum.reduceat(vals, starts, axis=0)
    counts = np.diff(np.r_[starts, e])
    winner = vals == np.repeat(best, counts, axis=0)
    cand = np.where(winner, order[:, None], e)
    out[segs] = best
    arg[segs] = np.minimum.reduceat(cand, starts, axis=0)
    return out, arg


def segment_max_backward(grad_out, arg, n_rows):
    g = np.zeros((n_rows, grad_out.shape[1]))
    seg, ch = np.nonzero(arg >= 0)
    g[arg[seg, ch], ch] = grad_out[seg, ch]
    return g


def scatter_add(index, values, n_out):
    """``out[index[k]] += values[k]`` in row order (deterministic)."""
    out = np.zeros((n_out,) + values.shape[1:])
    np.add.at(out, index, values)
    return out
