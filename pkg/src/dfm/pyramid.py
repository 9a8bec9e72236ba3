"""Laplacian pyramid over a fixed ladder of resolutions.

Downsampling is a block mean (area average), upsampling is nearest
neighbor. Level 1 is the coarse base image; every later level stores the
residual of its scale against the upsampled previous scale. With this
operator pair the decompose/reconstruct roundtrip is exact up to float
rounding, and a nearest-upsampled coarse image has an exactly zero
residual at the finer scale.

Arrays are (..., channels, height, width); any leading batch axes are
preserved. Levels can optionally be standardized by per-level stds
estimated from data, which keeps every level near unit variance for the
denoiser.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import ConfigError


@dataclass(frozen=True)
class ScaleSpec:
    """Resolution ladder, coarse to fine, plus channel count."""

    resolutions: tuple  # ((h1, w1), ..., (hS, wS)), strictly increasing
    channels: int = 1
    standardize: bool = False
    level_stds: tuple = None

    def __post_init__(self):
        res = tuple((int(h), int(w)) for h, w in self.resolutions)
        object.__setattr__(self, "resolutions", res)
        if len(res) < 1:
            raise ConfigError("scale ladder needs at least one resolution")
        for h, w in res:
            if h < 1 or w < 1:
                raise ConfigError(f"non-positive resolution {(h, w)}")
        for (h0, w0), (h1, w1) in zip(res, res[1:]):
            if h1 <= h0 or w1 <= w0:
                raise ConfigError(
                    f"resolutions must increase strictly: {(h0, w0)} -> {(h1, w1)}"
                )
            if h1 % h0 or w1 % w0:
                raise ConfigError(
                    f"consecutive resolutions need integer factors: "
                    f"{(h0, w0)} -> {(h1, w1)}"
                )
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if self.level_stds is not None:
            stds = tuple(float(s) for s in self.level_stds)
            object.__setattr__(self, "level_stds", stds)
            if len(stds) != len(res):
                raise ConfigError(
                    f"level_stds has {len(stds)} entries for {len(res)} levels"
                )
            if any(s <= 0 for s in stds):
                raise ConfigError("level_stds must be positive")

    @property
    def num_levels(self) -> int:
        return len(self.resolutions)

    @property
    def finest(self):
        return self.resolutions[-1]

    def factor(self, s: int):
        """(fh, fw) between level s-1 and level s (1-indexed, s >= 2)."""
        h0, w0 = self.resolutions[s - 2]
        h1, w1 = self.resolutions[s - 1]
        return h1 // h0, w1 // w0

    def level_shape(self, s: int):
        h, w = self.resolutions[s - 1]
        return (self.channels, h, w)


def downsample(x, factor):
    """Block-mean downsample of (..., h, w) by (fh, fw) or an int factor."""
    return K.block_down(x, factor)


def upsample(x, factor):
    """Nearest-neighbor upsample of (..., h, w) by (fh, fw) or an int factor."""
    return K.nearest_up(x, factor)


def _check_input(x, spec: ScaleSpec):
    h, w = spec.finest
    if x.ndim < 3 or x.shape[-3:] != (spec.channels, h, w):
        raise ConfigError(
            f"expected trailing shape {(spec.channels, h, w)}, got {x.shape}"
        )


def decompose(x, spec: ScaleSpec):
    """Split x (..., C, H, W) into pyramid levels, coarse base first."""
    _check_input(x, spec)
    downs = [np.asarray(x)]
    for s in range(spec.num_levels, 1, -1):
        downs.append(downsample(downs[-1], spec.factor(s)))
    downs.reverse()  # downs[s-1] is x resized to level s
    levels = [downs[0]]
    for s in range(2, spec.num_levels + 1):
        levels.append(downs[s - 1] - upsample(downs[s - 2], spec.factor(s)))
    return levels


def reconstruct(levels, spec: ScaleSpec):
    """Fold levels back into an image at the resolution of the last level.

    Accepts a prefix of the ladder (levels 1..k), which yields the partial
    image at scale k; useful for previews mid-generation.
    """
    if not 1 <= len(levels) <= spec.num_levels:
        raise ConfigError(
            f"got {len(levels)} levels for a {spec.num_levels}-level ladder"
        )
    for s, lvl in enumerate(levels, start=1):
        if lvl.shape[-3:] != spec.level_shape(s):
            raise ConfigError(
                f"level {s} has shape {lvl.shape}, expected trailing "
                f"{spec.level_shape(s)}"
            )
    out = np.asarray(levels[0])
    for s in range(2, len(levels) + 1):
        out = upsample(out, spec.factor(s)) + levels[s - 1]
    return out


def estimate_level_stds(levels, floor: float = 1e-6):
    """Per-level std over all entries, floored away from zero."""
    return tuple(max(float(np.std(lvl)), floor) for lvl in levels)


def standardize_levels(levels, spec: ScaleSpec):
    """Divide each level by its configured std."""
    if spec.level_stds is None:
        raise ConfigError("standardize requested but level_stds is unset")
    return [lvl / s for lvl, s in zip(levels, spec.level_stds)]


def destandardize_levels(levels, spec: ScaleSpec):
    """Inverse of standardize_levels (works on level prefixes too)."""
    if spec.level_stds is None:
        raise ConfigError("destandardize requested but level_stds is unset")
    return [lvl * s for lvl, s in zip(levels, spec.level_stds)]
