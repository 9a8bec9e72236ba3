"""Kernel dispatch: jitted and pure-numpy backends behind one API.

DFM_BACKEND=numpy forces the numpy implementations; DFM_BACKEND=numba (the
default) uses the jitted ones and falls back to numpy when numba is not
importable. The wrappers below normalize shapes, so callers may pass any
rank: row reductions (layernorm, softmax) apply over the last axis,
elementwise ops over flat views, resamplers over the last two axes.

The in-place optimizer kernels (adamw_step, ema_update) require their
state arrays to be C-contiguous; parameters are constructed that way.
"""

import os

import numpy as np

from ..errors import ConfigError

_requested = os.environ.get("DFM_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ConfigError(
        f"DFM_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numba":
    try:
        from . import numba_backend as _impl

        _name = "numba"
    except ImportError:
        from . import numpy_backend as _impl

        _name = "numpy"
else:
    from . import numpy_backend as _impl

    _name = "numpy"


def backend_name() -> str:
    """Name of the active backend, 'numba' or 'numpy'."""
    return _name


def _rows(x, keep=1):
    """C-contiguous view of x collapsed to (rows, *last keep axes)."""
    x = np.ascontiguousarray(x)
    return x.reshape((-1,) + x.shape[x.ndim - keep:])


def layernorm_fwd(x, eps=1e-6):
    """Normalize over the last axis; returns (y, mean, rstd) with flat stats."""
    x2 = _rows(x)
    y, mean, rstd = _impl.layernorm_fwd(x2, eps)
    return y.reshape(x.shape), mean, rstd


def layernorm_bwd(dy, x, mean, rstd):
    dx = _impl.layernorm_bwd(_rows(dy), _rows(x), mean, rstd)
    return dx.reshape(dy.shape)


def softmax_fwd(x):
    """Softmax over the last axis."""
    return _impl.softmax_fwd(_rows(x)).reshape(x.shape)


def softmax_bwd(dy, y):
    return _impl.softmax_bwd(_rows(dy), _rows(y)).reshape(dy.shape)


def silu_fwd(x):
    return _impl.silu_fwd(_rows(x, keep=0)).reshape(x.shape)


def silu_bwd(dy, x):
    return _impl.silu_bwd(_rows(dy, keep=0), _rows(x, keep=0)).reshape(dy.shape)


def gelu_fwd(x):
    """Returns (y, tanh) with the tanh flat; feed it back to gelu_bwd."""
    y, th = _impl.gelu_fwd(_rows(x, keep=0))
    return y.reshape(x.shape), th


def gelu_bwd(dy, x, th):
    dx = _impl.gelu_bwd(_rows(dy, keep=0), _rows(x, keep=0), th)
    return dx.reshape(dy.shape)


def rope_fwd(x, cos, sin):
    """Axial rotary embedding over (..., tokens, head_dim)."""
    return _impl.rope_fwd(_rows(x, keep=2), cos, sin).reshape(x.shape)


def rope_bwd(dy, cos, sin):
    return _impl.rope_bwd(_rows(dy, keep=2), cos, sin).reshape(dy.shape)


def adamw_step(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    """One AdamW update, in place on p/m/v. g is read-only."""
    g = np.ascontiguousarray(g).reshape(-1)
    _impl.adamw_step(p.reshape(-1), g, m.reshape(-1), v.reshape(-1),
                     lr, beta1, beta2, eps, wd, bc1, bc2)


def ema_update(e, w, beta):
    """Exponential moving average, in place on e."""
    _impl.ema_update(e.reshape(-1), np.ascontiguousarray(w).reshape(-1), beta)


def block_down(x, factor):
    """Block-mean downsample over the last two axes by (fh, fw)."""
    fh, fw = (factor, factor) if np.isscalar(factor) else factor
    x3 = _rows(x, keep=2)
    y = _impl.block_down(x3, fh, fw)
    return y.reshape(x.shape[:-2] + y.shape[-2:])


def nearest_up(x, factor):
    """Nearest-neighbor upsample over the last two axes by (fh, fw)."""
    fh, fw = (factor, factor) if np.isscalar(factor) else factor
    x3 = _rows(x, keep=2)
    y = _impl.nearest_up(x3, fh, fw)
    return y.reshape(x.shape[:-2] + y.shape[-2:])
