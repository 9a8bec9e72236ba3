"""Coarse-to-fine generation by Euler integration of per-level flows.

The staged schedule runs one phase per level: during its phase a level's
timestep rises linearly from 0 to the handoff point tau (the final level
rises straight to 1), after which it drifts toward 1 at a constant rate
spread over all remaining steps, finishing exactly at 1 on the last step.
Levels whose phase has not started stay at t=0, remain pure noise, and are
masked out of the network input.

The tied schedule (for single-timestep ablations) advances every level on
one shared linear grid with all levels active from the first step.

Classifier-free guidance batches the conditional and null-conditioned
forward into one call and combines uncond + w * (cond - uncond).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mdl
from . import pyramid as pyr
from .errors import ConfigError


@dataclass(frozen=True)
class SamplerConfig:
    budgets: tuple = (30, 10)  # Euler steps per stage phase
    tau: float = 0.9  # handoff timestep between phases
    cfg_weight: float = 1.0
    previews: bool = False

    def __post_init__(self):
        budgets = tuple(int(b) for b in self.budgets)
        object.__setattr__(self, "budgets", budgets)
        if len(budgets) < 1 or any(b < 1 for b in budgets):
            raise ConfigError("budgets must be positive step counts, one per level")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.cfg_weight < 0:
            raise ConfigError("cfg_weight must be >= 0")

    @property
    def total_steps(self) -> int:
        return sum(self.budgets)


def build_staged_schedule(budgets, tau: float, num_levels: int) -> np.ndarray:
    """Timestep grid (total_steps + 1, S) for the staged sampler.

    Column s: zeros before its phase; linear 0 -> tau over its own phase
    (0 -> 1 for the last level); then linear tau -> 1 over every remaining
    step, so the late drift rate is constant across later phases.
    """
    budgets = tuple(int(b) for b in budgets)
    if len(budgets) != num_levels:
        raise ConfigError(
            f"{len(budgets)} budgets for {num_levels} levels"
        )
    if any(b < 1 for b in budgets):
        raise ConfigError("budgets must be positive")
    if not 0.0 < tau <= 1.0:
        raise ConfigError("tau must lie in (0, 1]")
    total = sum(budgets)
    bounds = np.concatenate([[0], np.cumsum(budgets)])
    cols = []
    for s in range(num_levels):
        start, end = bounds[s], bounds[s + 1]
        own_target = 1.0 if s == num_levels - 1 else tau
        head = np.zeros(start)
        own = np.linspace(0.0, own_target, budgets[s] + 1)
        rem = total - end
        tail = np.linspace(own_target, 1.0, rem + 1)[1:]
        cols.append(np.concatenate([head, own, tail]))
    return np.stack(cols, axis=1)


def build_tied_schedule(total_steps: int, num_levels: int) -> np.ndarray:
    """Shared linear grid: every level runs 0 -> 1 together."""
    if total_steps < 1:
        raise ConfigError("total_steps must be positive")
    g = np.linspace(0.0, 1.0, total_steps + 1)
    return np.repeat(g[:, None], num_levels, axis=1)


def staged_step_stages(budgets) -> np.ndarray:
    """Active stage (1-based) for each Euler step of the staged schedule."""
    budgets = tuple(int(b) for b in budgets)
    return np.repeat(np.arange(1, len(budgets) + 1), budgets)


def estimate_clean(x, t, v):
    """One-jump clean estimate from state x at time t with velocity v."""
    return x + (1.0 - t) * v


def integrate(schedule, step_stage, x, velocity_fn, collect_previews=False):
    """Euler-integrate per-level states along a timestep schedule.

    schedule: (N + 1, S); step_stage: (N,) active stage per step; x: list
    of S arrays, modified functionally (a new list is returned). The
    velocity_fn(x, t_row, stage) returns per-level velocities (entries for
    s > stage may be None). Previews reuse the velocities of the final
    step of each phase: no extra velocity evaluations.

    Returns (final_x, previews) with previews a list of
    (stage, [clean-estimate levels 1..stage]).
    """
    schedule = np.asarray(schedule, dtype=np.float64)
    n_steps = len(step_stage)
    if schedule.shape[0] != n_steps + 1:
        raise ConfigError("schedule rows must equal steps + 1")
    x = list(x)
    previews = []
    for k in range(n_steps):
        stage = int(step_stage[k])
        t_row = schedule[k]
        v = velocity_fn(x, t_row, stage)
        phase_ends = k == n_steps - 1 or int(step_stage[k + 1]) != stage
        if collect_previews and phase_ends:
            clean = [
                estimate_clean(x[s], t_row[s], v[s]) for s in range(stage)
            ]
            previews.append((stage, clean))
        for s in range(stage):
            dt = schedule[k + 1, s] - schedule[k, s]
            if dt != 0.0:
                x[s] = x[s] + dt * v[s]
    return x, previews


@dataclass
class SampleResult:
    images: np.ndarray  # (N, C, H, W), data space
    levels: list  # final per-level states, data space
    previews: list  # [(stage, image batch at that scale)], data space
    labels: np.ndarray  # labels used, or None


def _model_velocity_fn(params, cfg: mdl.ModelConfig, labels, cfg_weight: float):
    """Velocity callback over the denoiser, with optional guidance."""
    guided = labels is not None and cfg_weight != 1.0

    def fn(x, t_row, stage):
        s_count = cfg.num_levels
        mask = (np.arange(1, s_count + 1) <= stage).astype(np.float64)
        n = x[0].shape[0]
        if guided:
            levels_in = [np.concatenate([lv, lv], axis=0) for lv in x]
            t = np.tile(t_row, (2 * n, 1))
            lab = np.concatenate(
                [np.asarray(labels), np.full(n, cfg.null_class)]
            )
        else:
            levels_in = x
            t = np.tile(t_row, (n, 1))
            lab = labels
        with ad.no_grad():
            outs = mdl.forward(params, cfg, levels_in, t, mask, stage, labels=lab)
        v = []
        for s in range(s_count):
            if outs[s] is None:
                v.append(None)
            elif guided:
                cond = outs[s].data[:n]
                unc = outs[s].data[n:]
                v.append(unc + cfg_weight * (cond - unc))
            else:
                v.append(outs[s].data)
        return v

    return fn


def generate(params, cfg: mdl.ModelConfig, spec: pyr.ScaleSpec, count: int,
             rng, sampler: SamplerConfig, labels=None,
             tied: bool = False) -> SampleResult:
    """Draw `count` samples; returns data-space images plus previews.

    Noise is drawn per level in ladder order from `rng`, so results are
    reproducible given (seed, count, schedule, labels, weights).
    """
    s_count = cfg.num_levels
    if spec.num_levels != s_count:
        raise ConfigError("model and scale ladder disagree on level count")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (count,):
            raise ConfigError(f"labels shape {labels.shape} != ({count},)")
        if cfg.num_classes == 0:
            raise ConfigError("labels given but the model is unconditional")
    if tied:
        schedule = build_tied_schedule(sampler.total_steps, s_count)
        step_stage = np.full(sampler.total_steps, s_count, dtype=np.int64)
    else:
        schedule = build_staged_schedule(sampler.budgets, sampler.tau, s_count)
        step_stage = staged_step_stages(sampler.budgets)

    dtype = params["patch.1.w"].data.dtype
    x = [
        rng.standard_normal((count, spec.channels, h, w)).astype(dtype)
        for (h, w) in spec.resolutions
    ]
    vfn = _model_velocity_fn(params, cfg, labels, sampler.cfg_weight)
    x, raw_previews = integrate(schedule, step_stage, x, vfn,
                                collect_previews=sampler.previews)

    def to_data_space(levels_prefix):
        if spec.standardize:
            levels_prefix = pyr.destandardize_levels(levels_prefix, spec)
        return pyr.reconstruct(levels_prefix, spec)

    previews = [(stage, to_data_space(list(clean))) for stage, clean in raw_previews]
    final_levels = (
        pyr.destandardize_levels(x, spec) if spec.standardize else list(x)
    )
    images = pyr.reconstruct(final_levels, spec)
    return SampleResult(images=images, levels=final_levels,
                        previews=previews, labels=labels)
