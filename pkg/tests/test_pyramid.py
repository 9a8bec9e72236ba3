import numpy as np
import pytest
from hypothesis import given, strategies as st

from dfm.errors import ConfigError
from dfm import pyramid as pyr

from conftest import rel_err


def spec2(standardize=False, stds=None):
    return pyr.ScaleSpec(resolutions=((2, 2), (4, 4)), channels=1,
                         standardize=standardize, level_stds=stds)


def test_scale_spec_validation():
    with pytest.raises(ConfigError):
        pyr.ScaleSpec(resolutions=())
    with pytest.raises(ConfigError):
        pyr.ScaleSpec(resolutions=((4, 4), (2, 2)))
    with pytest.raises(ConfigError):
        pyr.ScaleSpec(resolutions=((2, 2), (2, 2)))
    with pytest.raises(ConfigError):
        pyr.ScaleSpec(resolutions=((2, 2), (5, 5)))  # non-integer factor
    with pytest.raises(ConfigError):
        pyr.ScaleSpec(resolutions=((2, 2),), channels=0)
    with pytest.raises(ConfigError):
        pyr.ScaleSpec(resolutions=((2, 2), (4, 4)), level_stds=(1.0,))
    with pytest.raises(ConfigError):
        pyr.ScaleSpec(resolutions=((2, 2), (4, 4)), level_stds=(1.0, 0.0))


def test_spec_accessors():
    s = spec2()
    assert s.num_levels == 2
    assert s.finest == (4, 4)
    assert s.factor(2) == (2, 2)
    assert s.level_shape(1) == (1, 2, 2)


def test_decompose_hand_example():
    x = np.arange(1.0, 17.0).reshape(1, 4, 4)
    levels = pyr.decompose(x, spec2())
    base = np.array([[[3.5, 5.5], [11.5, 13.5]]])
    resid = np.array([[[-2.5, -1.5, -2.5, -1.5],
                       [1.5, 2.5, 1.5, 2.5],
                       [-2.5, -1.5, -2.5, -1.5],
                       [1.5, 2.5, 1.5, 2.5]]])
    assert np.array_equal(levels[0], base)
    assert np.array_equal(levels[1], resid)


def test_reconstruct_inverts_hand_example():
    x = np.arange(1.0, 17.0).reshape(1, 4, 4)
    assert np.array_equal(pyr.reconstruct(pyr.decompose(x, spec2()), spec2()), x)


@given(
    base=st.integers(min_value=1, max_value=3),
    factors=st.lists(st.sampled_from([2, 3]), min_size=0, max_size=2),
    channels=st.integers(min_value=1, max_value=3),
    batch=st.integers(min_value=0, max_value=2),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_roundtrip_property(base, factors, channels, batch, seed):
    res = [(base, base + 1)]
    for f in factors:
        h, w = res[-1]
        res.append((h * f, w * f))
    spec = pyr.ScaleSpec(resolutions=tuple(res), channels=channels)
    shape = ((batch,) if batch else ()) + (channels,) + res[-1]
    x = np.random.default_rng(seed).standard_normal(shape)
    levels = pyr.decompose(x, spec)
    assert len(levels) == spec.num_levels
    for s, lvl in enumerate(levels, start=1):
        assert lvl.shape == shape[:-3] + spec.level_shape(s)
    assert rel_err(pyr.reconstruct(levels, spec), x) < 1e-12


def test_constant_image_has_zero_residuals():
    spec = pyr.ScaleSpec(resolutions=((2, 2), (4, 4), (8, 8)))
    x = np.full((1, 8, 8), 0.37)
    levels = pyr.decompose(x, spec)
    assert np.allclose(levels[0], 0.37, atol=1e-15)
    assert np.all(levels[1] == 0)
    assert np.all(levels[2] == 0)


def test_upsampled_coarse_has_exact_zero_residual(rng):
    # an image that is a nearest-upsampled coarse field carries no detail
    z = rng.standard_normal((1, 2, 2))
    x = pyr.upsample(z, 2)
    levels = pyr.decompose(x, spec2())
    assert np.array_equal(levels[0], z)
    assert np.all(levels[1] == 0)


def test_partial_reconstruct_resolution(rng):
    spec = pyr.ScaleSpec(resolutions=((2, 2), (4, 4), (8, 8)))
    x = rng.standard_normal((2, 1, 8, 8))
    levels = pyr.decompose(x, spec)
    partial = pyr.reconstruct(levels[:2], spec)
    assert partial.shape == (2, 1, 4, 4)
    assert rel_err(partial, pyr.downsample(x, 2)) < 1e-12


def test_decompose_rejects_wrong_shape(rng):
    with pytest.raises(ConfigError):
        pyr.decompose(rng.standard_normal((1, 3, 3)), spec2())
    with pytest.raises(ConfigError):
        pyr.decompose(rng.standard_normal((2, 4, 4)), spec2())


def test_reconstruct_rejects_bad_levels(rng):
    spec = spec2()
    levels = pyr.decompose(rng.standard_normal((1, 4, 4)), spec)
    with pytest.raises(ConfigError):
        pyr.reconstruct([], spec)
    with pytest.raises(ConfigError):
        pyr.reconstruct(levels[::-1], spec)


def test_standardize_roundtrip(rng):
    spec = spec2(standardize=True, stds=(0.5, 2.0))
    x = rng.standard_normal((3, 1, 4, 4))
    levels = pyr.decompose(x, spec)
    std = pyr.standardize_levels(levels, spec)
    assert rel_err(std[0], levels[0] / 0.5) < 1e-12
    assert rel_err(std[1], levels[1] / 2.0) < 1e-12
    back = pyr.destandardize_levels(std, spec)
    for a, b in zip(back, levels):
        assert rel_err(a, b) < 1e-12


def test_standardize_requires_stds(rng):
    levels = pyr.decompose(rng.standard_normal((1, 4, 4)), spec2())
    with pytest.raises(ConfigError):
        pyr.standardize_levels(levels, spec2())


def test_estimate_level_stds(rng):
    levels = [rng.standard_normal((16, 1, 2, 2)) * 3.0, np.zeros((16, 1, 4, 4))]
    stds = pyr.estimate_level_stds(levels)
    assert abs(stds[0] - np.std(levels[0])) < 1e-12
    assert stds[1] == 1e-6  # floored, never zero
