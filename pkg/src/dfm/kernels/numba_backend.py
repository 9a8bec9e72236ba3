"""numba-jitted twins of the numpy kernels.

Same signatures and semantics as numpy_backend; every function is a single
fused pass, which is where the JIT pays off against numpy's temporaries.
Compiled objects are cached on disk (cache=True) so repeated CLI calls do
not re-JIT. fastmath stays off: the two backends should agree to the ulp
wherever the operation graphs match.
"""

import math

import numpy as np
from numba import njit

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


@njit(cache=True)
def layernorm_fwd(x, eps):
    n, c = x.shape
    y = np.empty_like(x)
    mean = np.empty(n, dtype=x.dtype)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        s = 0.0
        for j in range(c):
            s += x[i, j]
        mu = s / c
        q = 0.0
        for j in range(c):
            d = x[i, j] - mu
            q += d * d
        r = 1.0 / math.sqrt(q / c + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(c):
            y[i, j] = (x[i, j] - mu) * r
    return y, mean, rstd


@njit(cache=True)
def layernorm_bwd(dy, x, mean, rstd):
    n, c = dy.shape
    dx = np.empty_like(dy)
    for i in range(n):
        mu = mean[i]
        r = rstd[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(c):
            xh = (x[i, j] - mu) * r
            m1 += dy[i, j]
            m2 += dy[i, j] * xh
        m1 /= c
        m2 /= c
        for j in range(c):
            xh = (x[i, j] - mu) * r
            dx[i, j] = r * (dy[i, j] - m1 - xh * m2)
    return dx


@njit(cache=True)
def softmax_fwd(x):
    n, t = x.shape
    y = np.empty_like(x)
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, t):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(t):
            e = math.exp(x[i, j] - mx)
            y[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(t):
            y[i, j] *= inv
    return y


@njit(cache=True)
def softmax_bwd(dy, y):
    n, t = dy.shape
    dx = np.empty_like(dy)
    for i in range(n):
        dot = 0.0
        for j in range(t):
            dot += dy[i, j] * y[i, j]
        for j in range(t):
            dx[i, j] = y[i, j] * (dy[i, j] - dot)
    return dx


@njit(cache=True)
def silu_fwd(x):
    y = np.empty_like(x)
    for i in range(x.size):
        s = 1.0 / (1.0 + math.exp(-x[i]))
        y[i] = x[i] * s
    return y


@njit(cache=True)
def silu_bwd(dy, x):
    dx = np.empty_like(dy)
    for i in range(x.size):
        s = 1.0 / (1.0 + math.exp(-x[i]))
        dx[i] = dy[i] * (s * (1.0 + x[i] * (1.0 - s)))
    return dx


@njit(cache=True)
def gelu_fwd(x):
    y = np.empty_like(x)
    th = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        u = _GELU_C * (v + _GELU_A * v * v * v)
        t = math.tanh(u)
        th[i] = t
        y[i] = 0.5 * v * (1.0 + t)
    return y, th


@njit(cache=True)
def gelu_bwd(dy, x, th):
    dx = np.empty_like(dy)
    for i in range(x.size):
        v = x[i]
        t = th[i]
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
        dx[i] = dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return dx


@njit(cache=True)
def rope_fwd(x, cos, sin):
    n, t, hd = x.shape
    h = hd // 2
    y = np.empty_like(x)
    for i in range(n):
        for j in range(t):
            for k in range(h):
                c = cos[j, k]
                s = sin[j, k]
                a = x[i, j, k]
                b = x[i, j, h + k]
                y[i, j, k] = a * c - b * s
                y[i, j, h + k] = b * c + a * s
    return y


@njit(cache=True)
def rope_bwd(dy, cos, sin):
    n, t, hd = dy.shape
    h = hd // 2
    dx = np.empty_like(dy)
    for i in range(n):
        for j in range(t):
            for k in range(h):
                c = cos[j, k]
                s = sin[j, k]
                d1 = dy[i, j, k]
                d2 = dy[i, j, h + k]
                dx[i, j, k] = d1 * c + d2 * s
                dx[i, j, h + k] = d2 * c - d1 * s
    return dx


@njit(cache=True)
def adamw_step(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    decay = 1.0 - lr * wd
    for i in range(p.size):
        if wd != 0.0:
            p[i] = p[i] * decay
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        p[i] = p[i] - lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)


@njit(cache=True)
def ema_update(e, w, beta):
    for i in range(e.size):
        e[i] = beta * e[i] + (1.0 - beta) * w[i]


@njit(cache=True)
def block_down(x, fh, fw):
    n, h, w = x.shape
    oh = h // fh
    ow = w // fw
    y = np.empty((n, oh, ow), dtype=x.dtype)
    inv = 1.0 / (fh * fw)
    for i in range(n):
        for a in range(oh):
            for b in range(ow):
                s = 0.0
                for da in range(fh):
                    for db in range(fw):
                        s += x[i, a * fh + da, b * fw + db]
                y[i, a, b] = s * inv
    return y


@njit(cache=True)
def nearest_up(x, fh, fw):
    n, h, w = x.shape
    y = np.empty((n, h * fh, w * fw), dtype=x.dtype)
    for i in range(n):
        for a in range(h * fh):
            sa = a // fh
            for b in range(w * fw):
                y[i, a, b] = x[i, sa, b // fw]
    return y
