"""Numba-jitted versions of the hot kernels.

Same signatures and flat-parameter layout as ``_kernels_numpy``; see that
module for the reference semantics.  Kernels are compiled lazily on first
call and cached on disk.  No ``parallel=True`` or ``fastmath`` so results
are reproducible run to run.

Activation caches live in flat preallocated buffers (not lists of arrays:
list reads type-unify to layout-agnostic arrays, which knocks ``np.dot``
off the BLAS fast path).
"""

from __future__ import annotations

import numpy as np
from numba import njit

JIT = {"cache": True, "nogil": True}


@njit(**JIT)
def forward_batch(theta, in_dims, out_dims, offsets, relu_mask, x):
    a = x
    n = x.shape[0]
    n_layers = in_dims.shape[0]
    for l in range(n_layers):
        din = in_dims[l]
        dout = out_dims[l]
        o = offsets[l]
        w = theta[o : o + dout * din].reshape(dout, din)
        b = theta[o + dout * din : o + dout * din + dout]
        z = np.dot(a, w.T)
        for i in range(n):
            z[i] += b
        if relu_mask[l]:
            z = np.maximum(z, 0.0)
        a = z
    out = np.empty_like(a)
    for i in range(n):
        row = a[i]
        e = np.exp(row - row.max())
        out[i] = e / e.sum()
    return out


@njit(**JIT)
def loss_grads_batch(theta, in_dims, out_dims, offsets, relu_mask, x, y):
    n = x.shape[0]
    n_layers = in_dims.shape[0]

    # flat caches: layer l's pre/post activations sit at rows of
    # buf[n * cum[l] : n * cum[l+1]] viewed as (n, out_dims[l])
    cum = np.zeros(n_layers + 1, dtype=np.int64)
    for l in range(n_layers):
        cum[l + 1] = cum[l] + out_dims[l]
    pre_buf = np.empty(n * cum[n_layers])
    post_buf = np.empty(n * cum[n_layers])

    a = x
    for l in range(n_layers):
        din = in_dims[l]
        dout = out_dims[l]
        o = offsets[l]
        w = theta[o : o + dout * din].reshape(dout, din)
        b = theta[o + dout * din : o + dout * din + dout]
        z = pre_buf[n * cum[l] : n * cum[l + 1]].reshape(n, dout)
        np.dot(a, w.T, z)
        post = post_buf[n * cum[l] : n * cum[l + 1]].reshape(n, dout)
        if relu_mask[l]:
            for i in range(n):
                for j in range(dout):
                    v = z[i, j] + b[j]
                    z[i, j] = v
                    post[i, j] = v if v > 0.0 else 0.0
        else:
            for i in range(n):
                for j in range(dout):
                    v = z[i, j] + b[j]
                    z[i, j] = v
                    post[i, j] = v
        a = post

    c = out_dims[n_layers - 1]
    zout = post_buf[n * cum[n_layers - 1] :].reshape(n, c)
    loss = 0.0
    delta = np.empty((n, c))
    for i in range(n):
        row = zout[i]
        m = row.max()
        s = np.exp(row - m).sum()
        lse = m + np.log(s)
        loss += lse - row[y[i]]
        for j in range(c):
            delta[i, j] = np.exp(row[j] - lse)
        delta[i, y[i]] -= 1.0
    loss /= n
    for i in range(n):
        for j in range(c):
            delta[i, j] /= n

    grad = np.zeros_like(theta)
    for l in range(n_layers - 1, -1, -1):
        din = in_dims[l]
        dout = out_dims[l]
        o = offsets[l]
        if relu_mask[l]:
            z = pre_buf[n * cum[l] : n * cum[l + 1]].reshape(n, dout)
            for i in range(n):
                for j in range(dout):
                    if z[i, j] <= 0.0:
                        delta[i, j] = 0.0
        if l > 0:
            a_prev = post_buf[n * cum[l - 1] : n * cum[l]].reshape(n, in_dims[l])
        else:
            a_prev = x
        gw = grad[o : o + dout * din].reshape(dout, din)
        np.dot(delta.T, a_prev, gw)
        gb = grad[o + dout * din : o + dout * din + dout]
        for i in range(n):
            gb += delta[i]
        if l > 0:
            w = theta[o : o + dout * din].reshape(dout, din)
            delta = np.dot(delta, w)
    return loss, grad


@njit(**JIT)
def adam_update(theta, grad, m, v, step, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for i in range(theta.shape[0]):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        theta[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


@njit(**JIT)
def pair_distance_flat(theta_a, theta_b, offsets):
    total = 0.0
    for l in range(offsets.shape[0] - 1):
        acc = 0.0
        for i in range(offsets[l], offsets[l + 1]):
            d = theta_a[i] - theta_b[i]
            acc += d * d
        total += np.sqrt(acc)
    return total
