import numpy as np
import pytest
from hypothesis import settings

# JIT warmup on first kernel use can blow hypothesis' default deadline.
settings.register_profile("dfm", deadline=None, max_examples=40)
settings.load_profile("dfm")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar-valued f() wrt array x.

    f must close over x and re-run the forward pass; x is perturbed in
    place and restored.
    """
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)
