"""Pure-numpy reference implementations of the hot numeric kernels.

All kernels operate on the flat parameter vector layout described in
``cefl.model``: layer ``l`` occupies ``theta[offsets[l]:offsets[l+1]]`` as
``[W row-major (out_dim x in_dim), bias]``.  The numba backend in
``_kernels_numba`` mirrors these signatures exactly; ``cefl.backend`` picks
one of the two at import time.
"""

from __future__ import annotations

import numpy as np


def forward_batch(theta, in_dims, out_dims, offsets, relu_mask, x):
    """Forward pass over a batch, returning output probabilities.

    Per-layer activation is ReLU where ``relu_mask[l]`` is set and identity
    otherwise; the output is always softmax-normalized.
    """
    a = x
    n_layers = in_dims.shape[0]
    for l in range(n_layers):
        din = in_dims[l]
        dout = out_dims[l]
        o = offsets[l]
        w = theta[o : o + dout * din].reshape(dout, din)
        b = theta[o + dout * din : o + dout * din + dout]
        a = np.dot(a, w.T) + b
        if relu_mask[l]:
            a = np.maximum(a, 0.0)
    shift = a - a.max(axis=1, keepdims=True)
    e = np.exp(shift)
    return e / e.sum(axis=1, keepdims=True)


def loss_grads_batch(theta, in_dims, out_dims, offsets, relu_mask, x, y):
    """Mean cross-entropy loss and its gradient w.r.t. every parameter.

    Returns ``(loss, grad)`` with ``grad`` flat, same length as ``theta``.
    """
    n = x.shape[0]
    n_layers = in_dims.shape[0]

    # forward, caching post-activation outputs per layer
    acts = [x]
    pre = []
    a = x
    for l in range(n_layers):
        din = in_dims[l]
        dout = out_dims[l]
        o = offsets[l]
        w = theta[o : o + dout * din].reshape(dout, din)
        b = theta[o + dout * din : o + dout * din + dout]
        z = np.dot(a, w.T) + b
        pre.append(z)
        a = np.maximum(z, 0.0) if relu_mask[l] else z
        acts.append(a)

    # log-softmax cross-entropy on the final activations
    zout = acts[-1]
    m = zout.max(axis=1)
    lse = m + np.log(np.exp(zout - m[:, None]).sum(axis=1))
    loss = float(np.mean(lse - zout[np.arange(n), y]))

    probs = np.exp(zout - lse[:, None])
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad = np.zeros_like(theta)
    for l in range(n_layers - 1, -1, -1):
        din = in_dims[l]
        dout = out_dims[l]
        o = offsets[l]
        if relu_mask[l]:
            delta = delta * (pre[l] > 0.0)
        grad[o : o + dout * din] = np.dot(delta.T, acts[l]).ravel()
        grad[o + dout * din : o + dout * din + dout] = delta.sum(axis=0)
        if l > 0:
            w = theta[o : o + dout * din].reshape(dout, din)
            delta = np.dot(delta, w)
    return loss, grad


def adam_update(theta, grad, m, v, step, lr, beta1, beta2, eps):
    """One in-place Adam step with bias correction; ``step`` is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)


def pair_distance_flat(theta_a, theta_b, offsets):
    """Sum over layers of the Euclidean norm of per-layer weight differences."""
    total = 0.0
    for l in range(offsets.shape[0] - 1):
        d = theta_a[offsets[l] : offsets[l + 1]] - theta_b[offsets[l] : offsets[l + 1]]
        total += float(np.sqrt(np.dot(d, d)))
    return total
