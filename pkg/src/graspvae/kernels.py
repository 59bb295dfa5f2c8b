"""Hot numeric kernels.

Each public kernel is selected at import time between a numba-compiled loop
body (``*_loop``) and a numpy twin (``*_numpy``); see :mod:`graspvae._jit`.
Both twins are importable so tests and ``benchmarks/`` can compare them.

Network layout convention: a network is a flat float64 parameter vector plus
an int64 ``layout`` array with one row per layer::

    (n_in, n_out, activation_code, weight_offset, bias_offset)

Weights are stored row-major with shape ``(n_out, n_in)`` so a layer computes
``z = x @ W.T + b``. Forward buffers are flat too: layer ``l`` occupies
``batch * n_out`` consecutive entries.
"""
import math

import numpy as np

from ._jit import jit_or

LINEAR = 0
TANH = 1
SIGMOID = 2
QUATERNION_NORMALIZER = 3

# below this pre-activation norm the normalizer nudges qw
QNORM_GUARD = 1e-9


# --------------------------------------------------------------------------
# dense network forward
# --------------------------------------------------------------------------


def forward_numpy(params, layout, x):
    batch = x.shape[0]
    total = int(batch * layout[:, 1].sum()) if len(layout) else 0
    zbuf = np.empty(total)
    abuf = np.empty(total)
    guarded = 0
    a_prev = x
    off = 0
    for n_in, n_out, code, w_off, b_off in layout:
        w = params[w_off:w_off + n_out * n_in].reshape(n_out, n_in)
        b = params[b_off:b_off + n_out]
        z = zbuf[off:off + batch * n_out].reshape(batch, n_out)
        a = abuf[off:off + batch * n_out].reshape(batch, n_out)
        np.dot(a_prev, w.T, out=z)
        z += b
        if code == LINEAR:
            a[...] = z
        elif code == TANH:
            np.tanh(z, out=a)
        elif code == SIGMOID:
            a[...] = _sigmoid_numpy(z)
        else:
            norm = np.sqrt(np.einsum("ij,ij->i", z, z))
            small = norm < QNORM_GUARD
            if small.any():
                guarded += int(small.sum())
                z[small, 3] += QNORM_GUARD
                norm = np.sqrt(np.einsum("ij,ij->i", z, z))
            a[...] = z / norm[:, None]
        a_prev = a
        off += batch * n_out
    return zbuf, abuf, guarded


def _sigmoid_numpy(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@jit_or(forward_numpy)
def forward(params, layout, x):
    batch = x.shape[0]
    n_layers = layout.shape[0]
    total = 0
    for l in range(n_layers):
        total += batch * layout[l, 1]
    zbuf = np.empty(total)
    abuf = np.empty(total)
    guarded = 0
    a_prev = np.ascontiguousarray(x)
    off = 0
    for l in range(n_layers):
        n_in = layout[l, 0]
        n_out = layout[l, 1]
        code = layout[l, 2]
        w_off = layout[l, 3]
        b_off = layout[l, 4]
        w = params[w_off:w_off + n_out * n_in].reshape((n_out, n_in))
        b = params[b_off:b_off + n_out]
        z = zbuf[off:off + batch * n_out].reshape((batch, n_out))
        a = abuf[off:off + batch * n_out].reshape((batch, n_out))
        z[:, :] = np.dot(a_prev, w.T)
        for i in range(batch):
            if code == QUATERNION_NORMALIZER:
                sq = 0.0
                for j in range(n_out):
                    z[i, j] += b[j]
                    sq += z[i, j] * z[i, j]
                norm = math.sqrt(sq)
                if norm < QNORM_GUARD:
                    guarded += 1
                    z[i, 3] += QNORM_GUARD
                    sq = 0.0
                    for j in range(n_out):
                        sq += z[i, j] * z[i, j]
                    norm = math.sqrt(sq)
                for j in range(n_out):
                    a[i, j] = z[i, j] / norm
            else:
                for j in range(n_out):
                    v = z[i, j] + b[j]
                    z[i, j] = v
                    if code == TANH:
                        a[i, j] = math.tanh(v)
                    elif code == SIGMOID:
                        if v >= 0.0:
                            a[i, j] = 1.0 / (1.0 + math.exp(-v))
                        else:
                            ev = math.exp(v)
                            a[i, j] = ev / (1.0 + ev)
                    else:
                        a[i, j] = v
        a_prev = a
        off += batch * n_out
    return zbuf, abuf, guarded


# --------------------------------------------------------------------------
# dense network backward
# --------------------------------------------------------------------------


def backward_numpy(params, layout, x, zbuf, abuf, grad_out, grads):
    """Write parameter gradients into ``grads``; return the input gradient."""
    batch = x.shape[0]
    offsets = np.concatenate(([0], np.cumsum(batch * layout[:, 1])))
    g = grad_out
    for l in range(len(layout) - 1, -1, -1):
        n_in, n_out, code, w_off, b_off = layout[l]
        off = offsets[l]
        z = zbuf[off:off + batch * n_out].reshape(batch, n_out)
        a = abuf[off:off + batch * n_out].reshape(batch, n_out)
        if l == 0:
            a_prev = x
        else:
            p_off = offsets[l - 1]
            a_prev = abuf[p_off:p_off + batch * n_in].reshape(batch, n_in)
        if code == LINEAR:
            gz = g
        elif code == TANH:
            gz = g * (1.0 - a * a)
        elif code == SIGMOID:
            gz = g * a * (1.0 - a)
        else:
            norm = np.sqrt(np.einsum("ij,ij->i", z, z))
            proj = np.einsum("ij,ij->i", a, g)
            gz = (g - a * proj[:, None]) / norm[:, None]
        w = params[w_off:w_off + n_out * n_in].reshape(n_out, n_in)
        grads[w_off:w_off + n_out * n_in] = (gz.T @ a_prev).ravel()
        grads[b_off:b_off + n_out] = gz.sum(axis=0)
        g = gz @ w
    return g


@jit_or(backward_numpy)
def backward(params, layout, x, zbuf, abuf, grad_out, grads):
    batch = x.shape[0]
    n_layers = layout.shape[0]
    offsets = np.zeros(n_layers + 1, dtype=np.int64)
    for l in range(n_layers):
        offsets[l + 1] = offsets[l] + batch * layout[l, 1]
    g = np.ascontiguousarray(grad_out)
    x = np.ascontiguousarray(x)
    for l in range(n_layers - 1, -1, -1):
        n_in = layout[l, 0]
        n_out = layout[l, 1]
        code = layout[l, 2]
        w_off = layout[l, 3]
        b_off = layout[l, 4]
        off = offsets[l]
        z = zbuf[off:off + batch * n_out].reshape((batch, n_out))
        a = abuf[off:off + batch * n_out].reshape((batch, n_out))
        if l == 0:
            a_prev = x
        else:
            p_off = offsets[l - 1]
            a_prev = abuf[p_off:p_off + batch * n_in].reshape((batch, n_in))
        gz = np.empty((batch, n_out))
        for i in range(batch):
            if code == QUATERNION_NORMALIZER:
                sq = 0.0
                proj = 0.0
                for j in range(n_out):
                    sq += z[i, j] * z[i, j]
                    proj += a[i, j] * g[i, j]
                norm = math.sqrt(sq)
                for j in range(n_out):
                    gz[i, j] = (g[i, j] - a[i, j] * proj) / norm
            else:
                for j in range(n_out):
                    if code == TANH:
                        gz[i, j] = g[i, j] * (1.0 - a[i, j] * a[i, j])
                    elif code == SIGMOID:
                        gz[i, j] = g[i, j] * a[i, j] * (1.0 - a[i, j])
                    else:
                        gz[i, j] = g[i, j]
        w = params[w_off:w_off + n_out * n_in].reshape((n_out, n_in))
        dw = np.dot(gz.T, a_prev)
        grads[w_off:w_off + n_out * n_in] = dw.ravel()
        for j in range(n_out):
            s = 0.0
            for i in range(batch):
                s += gz[i, j]
            grads[b_off + j] = s
        g = np.dot(gz, w)
    return g


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


def adam_update_numpy(params, grads, m, v, lr, beta1, beta2, eps, step):
    """In-place Adam update for ``step`` (already incremented, >= 1)."""
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


@jit_or(adam_update_numpy)
def adam_update(params, grads, m, v, lr, beta1, beta2, eps, step):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for k in range(params.shape[0]):
        gk = grads[k]
        m[k] = beta1 * m[k] + (1.0 - beta1) * gk
        v[k] = beta2 * v[k] + (1.0 - beta2) * (gk * gk)
        params[k] -= lr * (m[k] / c1) / (math.sqrt(v[k] / c2) + eps)


# --------------------------------------------------------------------------
# kernel matrices
# --------------------------------------------------------------------------


def sq_distances_numpy(x):
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@jit_or(sq_distances_numpy)
def sq_distances(x):
    n, d = x.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                t = x[i, k] - x[j, k]
                s += t * t
            out[i, j] = s
            out[j, i] = s
    return out


def center_gram_numpy(k):
    row = k.mean(axis=0)
    col = k.mean(axis=1)
    return k - row[None, :] - col[:, None] + k.mean()


@jit_or(center_gram_numpy)
def center_gram(k):
    n = k.shape[0]
    row = np.zeros(n)
    col = np.zeros(n)
    total = 0.0
    for i in range(n):
        for j in range(n):
            row[j] += k[i, j]
            col[i] += k[i, j]
            total += k[i, j]
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = k[i, j] - row[j] / n - col[i] / n + total / (n * n)
    return out


# --------------------------------------------------------------------------
# cyclic Jacobi eigensolver for symmetric matrices
# --------------------------------------------------------------------------


def _rotation(app, aqq, apq):
    theta = (aqq - app) / (2.0 * apq)
    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
    if theta < 0.0:
        t = -t
    c = 1.0 / math.sqrt(t * t + 1.0)
    return c, t * c


def jacobi_eigh_numpy(a, tol=1e-14, max_sweeps=100):
    """Eigenvalues (unsorted) and eigenvectors (columns) of symmetric ``a``."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    vecs = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                c, s = _rotation(a[p, p], a[q, q], apq)
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = vecs[:, p].copy()
                vecs[:, p] = c * vp - s * vecs[:, q]
                vecs[:, q] = s * vp + c * vecs[:, q]
    return np.diag(a).copy(), vecs, sweeps


@jit_or(jacobi_eigh_numpy)
def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    a = a.copy()
    n = a.shape[0]
    vecs = np.eye(n)
    scale = 1e-300
    for i in range(n):
        for j in range(n):
            if abs(a[i, j]) > scale:
                scale = abs(a[i, j])
    sweeps = 0
    for sweep in range(1, max_sweeps + 1):
        sweeps = sweep
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if math.sqrt(off) <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = vecs[k, p]
                    vkq = vecs[k, q]
                    vecs[k, p] = c * vkp - s * vkq
                    vecs[k, q] = s * vkp + c * vkq
    return np.diag(a).copy(), vecs, sweeps


KERNEL_PAIRS = {
    "forward": (forward, forward_numpy),
    "backward": (backward, backward_numpy),
    "adam_update": (adam_update, adam_update_numpy),
    "sq_distances": (sq_distances, sq_distances_numpy),
    "center_gram": (center_gram, center_gram_numpy),
    "jacobi_eigh": (jacobi_eigh, jacobi_eigh_numpy),
}
