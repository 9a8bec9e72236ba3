"""Pure-numpy implementations of the hot kernels.

Each function here has a numba twin in numba_backend.py with an identical
signature. The dispatcher in kernels/__init__.py selects one backend at
import time (env var DFM_BACKEND) and adds the shape handling, so these
stay fixed-rank: 2-D for the row reductions, 1-D for elementwise ops,
3-D for rope and the resamplers.
"""

import numpy as np


def layernorm_fwd(x, eps):
    # x: (n, c). No affine parameters; returns (y, mean, rstd).
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    var = np.mean(xc * xc, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd[:, None], mean, rstd


def layernorm_bwd(dy, x, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    m1 = dy.mean(axis=1)
    m2 = (dy * xhat).mean(axis=1)
    return rstd[:, None] * (dy - m1[:, None] - xhat * m2[:, None])


def softmax_fwd(x):
    # x: (n, t). Rowwise, max-subtracted for stability.
    e = np.exp(x - x.max(axis=1)[:, None])
    return e / e.sum(axis=1)[:, None]


def softmax_bwd(dy, y):
    dot = (dy * y).sum(axis=1)
    return y * (dy - dot[:, None])


def silu_fwd(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def silu_bwd(dy, x):
    s = 1.0 / (1.0 + np.exp(-x))
    return dy * (s * (1.0 + x * (1.0 - s)))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu_fwd(x):
    # tanh approximation, matches the transformer-standard formula. The
    # tanh is returned for the backward pass (cf. layernorm's mean/rstd);
    # recomputing it dominates the backward cost otherwise.
    u = _GELU_C * (x + _GELU_A * x * x * x)
    th = np.tanh(u)
    return 0.5 * x * (1.0 + th), th


def gelu_bwd(dy, x, th):
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)


def rope_fwd(x, cos, sin):
    # x: (n, t, hd); cos/sin: (t, hd//2). Rotate-half convention.
    h = x.shape[2] // 2
    x1 = x[:, :, :h]
    x2 = x[:, :, h:]
    y = np.empty_like(x)
    y[:, :, :h] = x1 * cos - x2 * sin
    y[:, :, h:] = x2 * cos + x1 * sin
    return y


def rope_bwd(dy, cos, sin):
    # Transpose of the rotation.
    h = dy.shape[2] // 2
    d1 = dy[:, :, :h]
    d2 = dy[:, :, h:]
    dx = np.empty_like(dy)
    dx[:, :, :h] = d1 * cos + d2 * sin
    dx[:, :, h:] = d2 * cos - d1 * sin
    return dx


def adamw_step(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    # All 1-D, updated in place. Decoupled weight decay, bias-corrected
    # moments; bc1/bc2 are 1 - beta^t for the current step t.
    if wd != 0.0:
        p *= 1.0 - lr * wd
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def ema_update(e, w, beta):
    # 1-D, in place: e = beta*e + (1-beta)*w.
    e *= beta
    e += (1.0 - beta) * w


def block_down(x, fh, fw):
    # x: (n, h, w) -> (n, h/fh, w/fw), mean over each fh x fw block.
    n, h, w = x.shape
    return x.reshape(n, h // fh, fh, w // fw, fw).mean(axis=(2, 4))


def nearest_up(x, fh, fw):
    # x: (n, h, w) -> (n, h*fh, w*fw), each value repeated into a block.
    return np.repeat(np.repeat(x, fh, axis=1), fw, axis=2)
