import numpy as np
import pytest
from hypothesis import given, strategies as st

from dfm.errors import ConfigError
from dfm import flow

from conftest import rel_err


def test_interpolate_endpoints_exact(rng):
    x0 = rng.standard_normal((2, 1, 4, 4))
    x1 = rng.standard_normal((2, 1, 4, 4))
    assert np.array_equal(flow.interpolate(x0, x1, 0.0), x0)
    assert np.array_equal(flow.interpolate(x0, x1, 1.0), x1)


def test_interpolate_midpoint(rng):
    x0 = np.zeros(4)
    x1 = np.ones(4)
    assert rel_err(flow.interpolate(x0, x1, 0.25), 0.25 * np.ones(4)) < 1e-15


def test_velocity_target(rng):
    x0 = rng.standard_normal(5)
    x1 = rng.standard_normal(5)
    assert np.array_equal(flow.velocity_target(x0, x1), x1 - x0)


def test_corrupt_routes_per_level_timesteps(rng):
    b = 3
    l1 = [rng.standard_normal((b, 1, 2, 2)), rng.standard_normal((b, 1, 4, 4))]
    l0 = [rng.standard_normal((b, 1, 2, 2)), rng.standard_normal((b, 1, 4, 4))]
    t = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
    out = flow.corrupt(l1, l0, t)
    assert np.array_equal(out[0][0], l0[0][0])  # t=0: pure noise
    assert np.array_equal(out[1][0], l1[1][0])  # t=1: pure data
    assert np.array_equal(out[0][1], l1[0][1])
    assert np.array_equal(out[1][1], l0[1][1])
    assert rel_err(out[0][2], 0.5 * (l0[0][2] + l1[0][2])) < 1e-15


def test_corrupt_shared_timestep_row(rng):
    l1 = [rng.standard_normal((2, 1, 2, 2))]
    l0 = [rng.standard_normal((2, 1, 2, 2))]
    out = flow.corrupt(l1, l0, np.array([1.0]))
    assert np.array_equal(out[0], l1[0])


def test_dfm_loss_hand_example():
    pred = [np.array([[[1.0, 1.0]]]), np.array([[[2.0]]])]
    tgt = [np.array([[[0.0, 0.0]]]), np.array([[[0.0]]])]
    # level sums: 2 and 4
    assert flow.dfm_loss(pred, tgt, np.array([1.0, 1.0])) == pytest.approx(6.0)
    assert flow.dfm_loss(pred, tgt, np.array([1.0, 0.0])) == pytest.approx(2.0)
    assert flow.dfm_loss(pred, tgt, np.array([0.0, 0.0])) == 0.0


def test_dfm_loss_batched_matches_loop(rng):
    b, s = 5, 2
    pred = [rng.standard_normal((b, 1, 2, 2)), rng.standard_normal((b, 1, 4, 4))]
    tgt = [rng.standard_normal((b, 1, 2, 2)), rng.standard_normal((b, 1, 4, 4))]
    mask = (rng.random((b, s)) < 0.7).astype(np.float64)
    got = flow.dfm_loss(pred, tgt, mask)
    per = [
        flow.dfm_loss([p[i] for p in pred], [t[i] for t in tgt], mask[i])
        for i in range(b)
    ]
    assert rel_err(got, np.mean(per)) < 1e-12


def test_dfm_loss_level_count_mismatch(rng):
    a = [rng.standard_normal((1, 2, 2))]
    with pytest.raises(ConfigError):
        flow.dfm_loss(a, a, np.array([1.0, 1.0]))


def test_draw_config_validation():
    with pytest.raises(ConfigError):
        flow.DrawConfig(stage_probs=())
    with pytest.raises(ConfigError):
        flow.DrawConfig(stage_probs=(0.5, 0.4))
    with pytest.raises(ConfigError):
        flow.DrawConfig(stage_probs=(1.2, -0.2))
    with pytest.raises(ConfigError):
        flow.DrawConfig(stage_probs=(1.0,), current_scale=0.0)


def test_draws_shapes_and_mask_structure(rng):
    cfg = flow.DrawConfig(stage_probs=(0.5, 0.3, 0.2))
    d = flow.sample_train_draws(rng, 200, cfg)
    assert d.stage.shape == (200,)
    assert d.t.shape == (200, 3)
    assert d.mask.shape == (200, 3)
    assert d.stage.min() >= 1 and d.stage.max() <= 3
    cols = np.arange(1, 4)[None, :]
    assert np.array_equal(d.mask, (cols <= d.stage[:, None]).astype(np.float64))
    # masked levels sit exactly at t = 0
    assert np.all(d.t[cols > d.stage[:, None]] == 0.0)
    # unmasked levels have t in (0, 1)
    active = d.t[cols <= d.stage[:, None]]
    assert np.all((active > 0) & (active < 1))


@given(
    weights=st.lists(st.floats(0.05, 1.0, allow_nan=False),
                     min_size=1, max_size=4),
    seed=st.integers(0, 2**32 - 1),
)
def test_draw_structure_properties(weights, seed):
    probs = tuple(w / sum(weights) for w in weights)
    s_count = len(probs)
    d = flow.sample_train_draws(np.random.default_rng(seed), 64,
                                flow.DrawConfig(stage_probs=probs))
    cols = np.arange(1, s_count + 1)[None, :]
    assert np.all((d.stage >= 1) & (d.stage <= s_count))
    # mask is always the prefix {1..stage}; t is 0 exactly where masked
    # and strictly inside (0, 1) where active
    assert np.array_equal(d.mask, (cols <= d.stage[:, None]).astype(np.float64))
    assert np.all(d.t[cols > d.stage[:, None]] == 0.0)
    active = d.t[cols <= d.stage[:, None]]
    assert np.all((active > 0) & (active < 1))


def test_draw_stage_frequencies(rng):
    cfg = flow.DrawConfig(stage_probs=(0.9, 0.1))
    d = flow.sample_train_draws(rng, 20000, cfg)
    assert abs(np.mean(d.stage == 1) - 0.9) < 0.02


def test_draw_timestep_medians(rng):
    cfg = flow.DrawConfig(stage_probs=(0.5, 0.5))
    d = flow.sample_train_draws(rng, 40000, cfg)
    cur = d.t[np.arange(40000), d.stage - 1]
    assert abs(np.median(cur) - 0.5) < 0.02
    prev = d.t[:, 0][d.stage == 2]
    # median of sigmoid(1.5 + z) is sigmoid(1.5)
    assert abs(np.median(prev) - 0.8175744761936437) < 0.02


def test_draw_rng_consumption_is_stage_independent():
    # generator position after a draw batch must not depend on outcomes
    cfg_a = flow.DrawConfig(stage_probs=(1.0, 0.0))
    cfg_b = flow.DrawConfig(stage_probs=(0.0, 1.0))
    r1, r2 = np.random.default_rng(7), np.random.default_rng(7)
    flow.sample_train_draws(r1, 33, cfg_a)
    flow.sample_train_draws(r2, 33, cfg_b)
    assert r1.random() == r2.random()


def test_tied_draws(rng):
    cfg = flow.DrawConfig(stage_probs=(0.9, 0.1), tied=True)
    d = flow.sample_train_draws(rng, 50, cfg)
    assert np.all(d.stage == 2)
    assert np.all(d.mask == 1.0)
    assert np.array_equal(d.t[:, 0], d.t[:, 1])


def test_single_level_draws(rng):
    cfg = flow.DrawConfig(stage_probs=(1.0,))
    d = flow.sample_train_draws(rng, 64, cfg)
    assert np.all(d.stage == 1)
    assert np.all(d.mask == 1.0)
    assert np.all((d.t > 0) & (d.t < 1))
