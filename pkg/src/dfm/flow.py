"""Per-level linear flow corruption, training draws, and the masked loss.

Every pyramid level gets its own flow time t in [0, 1]: the corrupted
state is t*data + (1-t)*noise and the regression target is the constant
velocity data - noise. During training one "stage" (the highest level
currently being learned) is drawn per example; levels above the stage are
masked out of both the loss and the network input, levels below it get
late timesteps so they look nearly clean.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class DrawConfig:
    """Distribution of per-example (stage, timesteps, mask) draws.

    stage_probs[s-1] is the probability of drawing stage s; its length
    fixes the number of levels. The current stage's timestep is
    logit-normal(current_loc, current_scale); completed stages draw from
    logit-normal(prev_loc, prev_scale), biased late so they appear almost
    clean. tied=True collapses to single-timestep training: one shared t,
    all levels active.
    """

    stage_probs: tuple
    current_loc: float = 0.0
    current_scale: float = 1.0
    prev_loc: float = 1.5
    prev_scale: float = 1.0
    tied: bool = False

    def __post_init__(self):
        probs = tuple(float(p) for p in self.stage_probs)
        object.__setattr__(self, "stage_probs", probs)
        if len(probs) < 1:
            raise ConfigError("stage_probs must have one entry per level")
        if any(p < 0 for p in probs):
            raise ConfigError("stage_probs must be nonnegative")
        total = sum(probs)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"stage_probs sum to {total}, expected 1")
        if self.current_scale <= 0 or self.prev_scale <= 0:
            raise ConfigError("logit-normal scales must be positive")

    @property
    def num_levels(self) -> int:
        return len(self.stage_probs)


@dataclass
class TrainDraws:
    """One batch of draws: stage (B,), t (B, S), mask (B, S)."""

    stage: np.ndarray
    t: np.ndarray
    mask: np.ndarray


def interpolate(x0, x1, t):
    """t*x1 + (1-t)*x0 with t scalar or broadcastable."""
    t = np.asarray(t, dtype=np.asarray(x1).dtype)
    return t * x1 + (1.0 - t) * x0


def velocity_target(x0, x1):
    """Constant velocity of the straight path from x0 to x1."""
    return x1 - x0


def corrupt(levels1, levels0, t):
    """Interpolate each level with its own timestep column.

    levels1/levels0: lists of (B, C, h, w); t: (B, S) or (S,).
    """
    t = np.asarray(t)
    out = []
    for s, (x1, x0) in enumerate(zip(levels1, levels0)):
        ts = t[..., s]
        ts = ts.reshape(ts.shape + (1,) * (x1.ndim - ts.ndim))
        out.append(interpolate(x0, x1, ts))
    return out


def logit_normal(rng, loc, scale, size):
    """sigmoid(loc + scale * z), z ~ N(0, 1)."""
    z = rng.standard_normal(size)
    return 1.0 / (1.0 + np.exp(-(loc + scale * z)))


def sample_train_draws(rng, batch: int, cfg: DrawConfig) -> TrainDraws:
    """Draw per-example stages, per-level timesteps, and loss masks.

    The generator is consumed a fixed number of times regardless of the
    stages drawn, so training streams are reproducible and resumable.
    """
    s_count = cfg.num_levels
    if cfg.tied:
        z = rng.standard_normal(batch)
        t_shared = 1.0 / (1.0 + np.exp(-(cfg.current_loc + cfg.current_scale * z)))
        t = np.repeat(t_shared[:, None], s_count, axis=1)
        stage = np.full(batch, s_count, dtype=np.int64)
        mask = np.ones((batch, s_count), dtype=np.float64)
        return TrainDraws(stage=stage, t=t, mask=mask)

    u = rng.random(batch)
    z_cur = rng.standard_normal(batch)
    z_prev = rng.standard_normal((batch, s_count))

    cum = np.cumsum(cfg.stage_probs)
    cum[-1] = 1.0  # guard the top edge against float drift
    stage = (np.searchsorted(cum, u, side="right") + 1).astype(np.int64)

    t_cur = 1.0 / (1.0 + np.exp(-(cfg.current_loc + cfg.current_scale * z_cur)))
    t_prev = 1.0 / (1.0 + np.exp(-(cfg.prev_loc + cfg.prev_scale * z_prev)))

    cols = np.arange(1, s_count + 1)[None, :]
    t = np.where(cols < stage[:, None], t_prev, 0.0)
    t[np.arange(batch), stage - 1] = t_cur
    mask = (cols <= stage[:, None]).astype(np.float64)
    return TrainDraws(stage=stage, t=t, mask=mask)


def dfm_loss(pred_levels, target_levels, mask) -> float:
    """Masked squared error over levels.

    Per example: sum over levels of mask * ||pred - target||^2 (a plain
    sum of squares, no pixel normalizer). For batched levels the result is
    the mean of per-example losses; mask is (S,) shared or (B, S).
    """
    mask = np.asarray(mask, dtype=np.float64)
    if len(pred_levels) != len(target_levels) or len(pred_levels) != mask.shape[-1]:
        raise ConfigError("pred, target, and mask disagree on level count")
    batched = pred_levels[0].ndim == 4
    per_ex = 0.0
    for s, (p, tgt) in enumerate(zip(pred_levels, target_levels)):
        d = np.asarray(p, dtype=np.float64) - np.asarray(tgt, dtype=np.float64)
        if batched:
            e = (d * d).sum(axis=(1, 2, 3))
            m = mask[:, s] if mask.ndim == 2 else mask[s]
        else:
            e = (d * d).sum()
            m = mask[s]
        per_ex = per_ex + m * e
    return float(np.mean(per_ex)) if batched else float(per_ex)
