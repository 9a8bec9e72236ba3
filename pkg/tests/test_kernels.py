import numpy as np
import pytest

from dfm import kernels as K
from dfm.kernels import numpy_backend as npk

from conftest import numeric_grad, rel_err

try:
    from dfm.kernels import numba_backend as nbk

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def _naive_layernorm(x, eps):
    m = x.mean(-1, keepdims=True)
    v = x.var(-1, keepdims=True)
    return (x - m) / np.sqrt(v + eps)


def test_layernorm_forward_matches_naive(rng):
    x = rng.standard_normal((6, 13))
    y, mean, rstd = K.layernorm_fwd(x, 1e-6)
    assert rel_err(y, _naive_layernorm(x, 1e-6)) < 1e-12
    assert mean.shape == (6,) and rstd.shape == (6,)


def test_layernorm_backward_matches_numeric(rng):
    x = rng.standard_normal((4, 9))
    w = rng.standard_normal((4, 9))  # fixed cotangent

    def loss():
        y, _, _ = K.layernorm_fwd(x, 1e-6)
        return float((y * w).sum())

    _, mean, rstd = K.layernorm_fwd(x, 1e-6)
    dx = K.layernorm_bwd(w, x, mean, rstd)
    assert rel_err(dx, numeric_grad(loss, x)) < 1e-7


def test_softmax_rows_normalized(rng):
    x = rng.standard_normal((5, 11)) * 30  # large logits, stability check
    y = K.softmax_fwd(x)
    assert np.all(y > 0)
    assert rel_err(y.sum(-1), np.ones(5)) < 1e-12


def test_softmax_backward_matches_numeric(rng):
    x = rng.standard_normal((3, 7))
    w = rng.standard_normal((3, 7))

    def loss():
        return float((K.softmax_fwd(x) * w).sum())

    dx = K.softmax_bwd(w, K.softmax_fwd(x))
    assert rel_err(dx, numeric_grad(loss, x)) < 1e-7


def test_silu_backward_matches_numeric(rng):
    x = rng.standard_normal(64) * 2
    w = rng.standard_normal(64)

    def loss():
        return float((K.silu_fwd(x) * w).sum())

    assert rel_err(K.silu_bwd(w, x), numeric_grad(loss, x)) < 1e-7


def test_gelu_backward_matches_numeric(rng):
    x = rng.standard_normal(64) * 2
    w = rng.standard_normal(64)

    def loss():
        y, _ = K.gelu_fwd(x)
        return float((y * w).sum())

    _, th = K.gelu_fwd(x)
    assert rel_err(K.gelu_bwd(w, x, th), numeric_grad(loss, x)) < 1e-7


def test_gelu_known_values():
    # gelu(0) = 0; large inputs pass through; symmetry x*cdf-ish behavior
    x = np.array([0.0, 10.0, -10.0, 1.0])
    y, th = K.gelu_fwd(x)
    assert y[0] == 0.0
    assert abs(y[1] - 10.0) < 1e-6
    assert abs(y[2]) < 1e-6
    assert abs(y[3] - 0.8411919906082768) < 1e-12
    # saved tanh really is tanh of the cubic argument
    u = 0.7978845608028654 * (x + 0.044715 * x**3)
    assert rel_err(th, np.tanh(u)) < 1e-12


def _rope_tables(rng, t, hd):
    ang = rng.standard_normal((t, hd // 2))
    return np.cos(ang), np.sin(ang)


def test_rope_preserves_pair_norms(rng):
    cos, sin = _rope_tables(rng, 5, 8)
    x = rng.standard_normal((2, 3, 5, 8))
    y = K.rope_fwd(x, cos, sin)
    assert rel_err((y * y).sum(-1), (x * x).sum(-1)) < 1e-12


def test_rope_backward_is_adjoint(rng):
    # <rope(x), u> == <x, rope_bwd(u)> for the linear map
    cos, sin = _rope_tables(rng, 4, 12)
    x = rng.standard_normal((3, 4, 12))
    u = rng.standard_normal((3, 4, 12))
    lhs = float((K.rope_fwd(x, cos, sin) * u).sum())
    rhs = float((x * K.rope_bwd(u, cos, sin)).sum())
    assert abs(lhs - rhs) < 1e-9


def test_rope_zero_angle_is_identity(rng):
    cos = np.ones((4, 6))
    sin = np.zeros((4, 6))
    x = rng.standard_normal((2, 4, 12))
    assert np.array_equal(K.rope_fwd(x, cos, sin), x)


def test_adamw_step_matches_reference(rng):
    p = rng.standard_normal(10)
    g = rng.standard_normal(10)
    m = rng.standard_normal(10) * 0.1
    v = rng.random(10) * 0.1
    lr, b1, b2, eps, wd = 1e-3, 0.9, 0.99, 1e-8, 0.01
    step = 7
    bc1, bc2 = 1 - b1**step, 1 - b2**step

    # decoupled decay first, then bias-corrected adaptive update
    p_ref = p * (1 - lr * wd)
    m_ref = b1 * m + (1 - b1) * g
    v_ref = b2 * v + (1 - b2) * g * g
    p_ref = p_ref - lr * (m_ref / bc1) / (np.sqrt(v_ref / bc2) + eps)

    K.adamw_step(p, g, m, v, lr, b1, b2, eps, wd, bc1, bc2)
    assert rel_err(p, p_ref) < 1e-12
    assert rel_err(m, m_ref) < 1e-12
    assert rel_err(v, v_ref) < 1e-12


def test_adamw_zero_decay_skips_shrink(rng):
    p0 = rng.standard_normal(6)
    g = np.zeros(6)
    p = p0.copy()
    m = np.zeros(6)
    v = np.zeros(6)
    K.adamw_step(p, g, m, v, 1e-3, 0.9, 0.99, 1e-8, 0.0, 0.1, 0.1)
    # zero grad + zero decay: parameters unchanged
    assert np.allclose(p, p0, atol=1e-15)


def test_ema_update_recursion(rng):
    e = np.array([1.0, 2.0])
    w = np.array([3.0, 4.0])
    K.ema_update(e, w, 0.9)
    assert rel_err(e, [1.2, 2.2]) < 1e-12


def test_block_down_hand_example():
    x = np.arange(1.0, 17.0).reshape(1, 4, 4)
    y = K.block_down(x, 2)
    assert np.array_equal(y, [[[3.5, 5.5], [11.5, 13.5]]])


def test_nearest_up_hand_example():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    y = K.nearest_up(x, 2)
    expect = [[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]]
    assert np.array_equal(y, np.asarray(expect, dtype=np.float64))


def test_down_of_up_is_identity():
    # integer-valued floats make the block mean exact
    x = np.arange(24.0).reshape(2, 3, 4)
    assert np.array_equal(K.block_down(K.nearest_up(x, (2, 3)), (2, 3)), x)


def test_resample_anisotropic_factors(rng):
    x = rng.standard_normal((1, 6, 4))
    y = K.block_down(x, (3, 2))
    assert y.shape == (1, 2, 2)
    z = K.nearest_up(y, (3, 2))
    assert z.shape == (1, 6, 4)


def test_dispatcher_handles_leading_axes(rng):
    x = rng.standard_normal((2, 3, 5))
    y, _, _ = K.layernorm_fwd(x, 1e-6)
    for i in range(2):
        yi, _, _ = K.layernorm_fwd(x[i], 1e-6)
        assert rel_err(y[i], yi) < 1e-13
    s = K.silu_fwd(x)
    assert s.shape == x.shape


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
def test_backend_parity(rng):
    x2 = rng.standard_normal((5, 16))
    g2 = rng.standard_normal((5, 16))
    pairs = []

    y_np, m_np, r_np = npk.layernorm_fwd(x2, 1e-6)
    y_nb, m_nb, r_nb = nbk.layernorm_fwd(x2, 1e-6)
    pairs += [(y_np, y_nb), (m_np, m_nb), (r_np, r_nb)]
    pairs.append((npk.layernorm_bwd(g2, x2, m_np, r_np),
                  nbk.layernorm_bwd(g2, x2, m_nb, r_nb)))

    s_np = npk.softmax_fwd(x2)
    s_nb = nbk.softmax_fwd(x2)
    pairs.append((s_np, s_nb))
    pairs.append((npk.softmax_bwd(g2, s_np), nbk.softmax_bwd(g2, s_nb)))

    x1 = x2.reshape(-1)
    g1 = g2.reshape(-1)
    pairs.append((npk.silu_fwd(x1), nbk.silu_fwd(x1)))
    pairs.append((npk.silu_bwd(g1, x1), nbk.silu_bwd(g1, x1)))
    gy_np, gt_np = npk.gelu_fwd(x1)
    gy_nb, gt_nb = nbk.gelu_fwd(x1)
    pairs += [(gy_np, gy_nb), (gt_np, gt_nb)]
    pairs.append((npk.gelu_bwd(g1, x1, gt_np), nbk.gelu_bwd(g1, x1, gt_nb)))

    x3 = rng.standard_normal((4, 6, 8))
    ang = rng.standard_normal((6, 4))
    c, s = np.cos(ang), np.sin(ang)
    pairs.append((npk.rope_fwd(x3, c, s), nbk.rope_fwd(x3, c, s)))
    pairs.append((npk.rope_bwd(x3, c, s), nbk.rope_bwd(x3, c, s)))

    img = rng.standard_normal((2, 6, 6))
    pairs.append((npk.block_down(img, 2, 2), nbk.block_down(img, 2, 2)))
    pairs.append((npk.nearest_up(img, 2, 2), nbk.nearest_up(img, 2, 2)))

    for a, b in pairs:
        assert rel_err(a, b) < 1e-13

    p1, m1, v1 = x1.copy(), np.zeros_like(x1), np.zeros_like(x1)
    p2, m2, v2 = x1.copy(), np.zeros_like(x1), np.zeros_like(x1)
    npk.adamw_step(p1, g1, m1, v1, 1e-3, 0.9, 0.99, 1e-8, 0.01, 0.1, 0.01)
    nbk.adamw_step(p2, g1, m2, v2, 1e-3, 0.9, 0.99, 1e-8, 0.01, 0.1, 0.01)
    assert rel_err(p1, p2) < 1e-13

    e1, e2 = x1.copy(), x1.copy()
    npk.ema_update(e1, g1, 0.999)
    nbk.ema_update(e2, g1, 0.999)
    assert rel_err(e1, e2) < 1e-13
