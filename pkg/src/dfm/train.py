"""Training loop: grouped-by-stage batches, AdamW, EMA, checkpoint/resume.

Each step draws (stage, timesteps, mask) per example, corrupts the
pre-decomposed pyramid levels, and partitions the batch by stage so every
network call shares one mask prefix. The loss is the masked sum of squared
errors per example, averaged over the batch (groups contribute sums, the
final division is by the full batch size).

Determinism contract: one generator drives the whole run and is consumed
in a fixed order per step (batch indices, draws, per-level noise, class
dropout); parameters never depend on wall clock or dict iteration order
(names are processed sorted). The generator state is serialized into
checkpoints, so an interrupted run resumed from step k reproduces the
uninterrupted run bit for bit.
"""

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import ckpt
from . import flow
from . import kernels as K
from . import model as mdl
from . import pyramid as pyr
from .errors import ConfigError, RuntimeAbort

VARIANTS = ("dfm", "tied", "vanilla")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch: int = 64
    lr: float = 1e-4
    warmup_steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0  # math.inf disables
    ema_beta: float = 0.999
    seed: int = 0
    variant: str = "dfm"
    checkpoint_every: int = 1000
    std_probe: int = 1024  # examples used to estimate level stds

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        for b in (self.beta1, self.beta2, self.ema_beta):
            if not 0.0 <= b < 1.0:
                raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("eps must be > 0 and weight_decay >= 0")
        if not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive (inf disables)")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")
        if self.std_probe < 1:
            raise ConfigError("std_probe must be positive")


def lr_at(cfg: TrainConfig, update_index: int) -> float:
    """Learning rate for the update_index-th update (1-based), with
    linear warmup."""
    if cfg.warmup_steps <= 0:
        return cfg.lr
    return cfg.lr * min(1.0, update_index / cfg.warmup_steps)


def decays(name: str, p) -> bool:
    """Weight decay applies to matrix-shaped parameters only."""
    return p.data.ndim >= 2


@dataclass
class TrainState:
    params: dict
    ema: dict
    m: dict
    v: dict
    step: int
    rng: np.random.Generator


def init_state(mcfg: mdl.ModelConfig, tcfg: TrainConfig,
               dtype=np.float32) -> TrainState:
    params = mdl.init_params(mcfg, np.random.default_rng((tcfg.seed, 0)), dtype)
    ema = {k: p.data.copy() for k, p in params.items()}
    m = {k: np.zeros_like(p.data) for k, p in params.items()}
    v = {k: np.zeros_like(p.data) for k, p in params.items()}
    return TrainState(params=params, ema=ema, m=m, v=v, step=0,
                      rng=np.random.default_rng((tcfg.seed, 1)))


_MASK64 = (1 << 64) - 1


def rng_to_array(rng) -> np.ndarray:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise RuntimeAbort("only the default PCG64 generator is supported")
    s = st["state"]["state"]
    inc = st["state"]["inc"]
    return np.array(
        [s & _MASK64, (s >> 64) & _MASK64, inc & _MASK64, (inc >> 64) & _MASK64,
         st["has_uint32"], st["uinteger"]],
        dtype=np.uint64,
    )


def rng_from_array(a) -> np.random.Generator:
    a = np.asarray(a, dtype=np.uint64)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(a[0]) | (int(a[1]) << 64),
                  "inc": int(a[2]) | (int(a[3]) << 64)},
        "has_uint32": int(a[4]),
        "uinteger": int(a[5]),
    }
    return rng


def draw_config(mcfg: mdl.ModelConfig, tcfg: TrainConfig,
                stage_probs, **kw) -> flow.DrawConfig:
    """DrawConfig for the configured variant."""
    if tcfg.variant == "vanilla" and mcfg.num_levels != 1:
        raise ConfigError("variant=vanilla requires a single-level ladder")
    return flow.DrawConfig(stage_probs=tuple(stage_probs),
                           tied=(tcfg.variant == "tied"), **kw)


def train_step(state: TrainState, mcfg: mdl.ModelConfig, tcfg: TrainConfig,
               dcfg: flow.DrawConfig, levels, labels) -> dict:
    """One optimization step over pre-decomposed (standardized) levels."""
    b = tcfg.batch
    n = levels[0].shape[0]
    s_count = mcfg.num_levels
    dtype = levels[0].dtype

    # fixed rng consumption order: indices, draws, noise, dropout
    idx = state.rng.integers(0, n, size=b)
    draws = flow.sample_train_draws(state.rng, b, dcfg)
    noise = [
        state.rng.standard_normal((b,) + lvl.shape[1:], dtype=dtype)
        for lvl in levels
    ]
    drop_u = state.rng.random(b) if mcfg.num_classes > 0 else None

    x1 = [lvl[idx] for lvl in levels]
    xt = flow.corrupt(x1, noise, draws.t)
    targets = [d - z for d, z in zip(x1, noise)]
    lab = labels[idx] if labels is not None and mcfg.num_classes > 0 else None

    total = None
    for s in np.unique(draws.stage):
        s = int(s)
        rows = np.nonzero(draws.stage == s)[0]
        mask = (np.arange(1, s_count + 1) <= s).astype(np.float64)
        outs = mdl.forward(
            state.params, mcfg,
            [x[rows] for x in xt], draws.t[rows], mask, s,
            labels=None if lab is None else lab[rows],
            drop_uniform=None if drop_u is None else drop_u[rows],
        )
        for lv in range(s):
            term = ad.sse(ad.sub(outs[lv], targets[lv][rows]))
            total = term if total is None else ad.add(total, term)
    loss = ad.scale(total, 1.0 / b)

    ad.zero_grads(state.params)
    ad.backward(loss)

    names = sorted(state.params)
    grads = {}
    gsq = 0.0
    for name in names:
        p = state.params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        g = np.ascontiguousarray(g, dtype=p.data.dtype)
        grads[name] = g
        gsq += float(np.dot(g.reshape(-1), g.reshape(-1)))
    gnorm = math.sqrt(gsq)

    clip_scale = 1.0
    if math.isfinite(tcfg.grad_clip) and gnorm > tcfg.grad_clip:
        clip_scale = tcfg.grad_clip / gnorm

    k = state.step + 1
    lr_k = lr_at(tcfg, k)
    bc1 = 1.0 - tcfg.beta1**k
    bc2 = 1.0 - tcfg.beta2**k
    for name in names:
        p = state.params[name]
        g = grads[name] if clip_scale == 1.0 else grads[name] * clip_scale
        wd = tcfg.weight_decay if decays(name, p) else 0.0
        K.adamw_step(p.data, g, state.m[name], state.v[name],
                     lr_k, tcfg.beta1, tcfg.beta2, tcfg.eps, wd, bc1, bc2)
        K.ema_update(state.ema[name], p.data, tcfg.ema_beta)

    state.step += 1
    return {"loss": float(loss.data), "grad_norm": gnorm, "lr": lr_k}


def state_tensors(state: TrainState) -> dict:
    out = {}
    for name, p in state.params.items():
        out[f"param/{name}"] = p.data
        out[f"ema/{name}"] = state.ema[name]
        out[f"m/{name}"] = state.m[name]
        out[f"v/{name}"] = state.v[name]
    out["rng/state"] = rng_to_array(state.rng)
    return out


def restore_state(state: TrainState, loaded: ckpt.Checkpoint):
    """Load checkpoint tensors into a freshly initialized state, in place."""
    for name, p in state.params.items():
        for space, store in (("param", None), ("ema", state.ema),
                             ("m", state.m), ("v", state.v)):
            key = f"{space}/{name}"
            if key not in loaded.tensors:
                raise RuntimeAbort(f"checkpoint lacks tensor {key}")
            arr = loaded.tensors[key]
            if arr.shape != p.data.shape or arr.dtype != p.data.dtype:
                raise RuntimeAbort(f"checkpoint tensor {key} has wrong shape/dtype")
            if store is None:
                p.data = arr.copy()
            else:
                store[name] = arr.copy()
    state.rng = rng_from_array(loaded.tensors["rng/state"])
    state.step = loaded.step


def checkpoint_path(run_dir, step: int) -> Path:
    return Path(run_dir) / f"checkpoint_{step:07d}.ckpt"


def find_latest_checkpoint(run_dir):
    hits = sorted(Path(run_dir).glob("checkpoint_*.ckpt"))
    return hits[-1] if hits else None


def _write_log(path, rows):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "grad_norm", "lr", "wall_ms"])
        w.writerows(rows)
    Path(tmp).replace(path)


def _read_log(path, upto_step: int):
    if not Path(path).exists():
        return []
    with open(path, newline="") as f:
        rdr = csv.reader(f)
        header = next(rdr, None)
        if header is None:
            return []
        return [row for row in rdr if row and int(row[0]) <= upto_step]


def prepare_levels(dataset, spec: pyr.ScaleSpec):
    """Decompose (and standardize) the whole dataset once."""
    levels = pyr.decompose(dataset.images, spec)
    if spec.standardize:
        levels = pyr.standardize_levels(levels, spec)
    return [np.ascontiguousarray(l, dtype=np.float32) for l in levels]


def resolve_level_stds(dataset, spec: pyr.ScaleSpec, probe: int) -> pyr.ScaleSpec:
    """Fill in level_stds from the first `probe` examples if needed."""
    if not spec.standardize or spec.level_stds is not None:
        return spec
    sample = dataset.images[:probe]
    stds = pyr.estimate_level_stds(pyr.decompose(sample, spec))
    return pyr.ScaleSpec(resolutions=spec.resolutions, channels=spec.channels,
                         standardize=True, level_stds=stds)


def _resume_compatible(a: str, b: str) -> bool:
    """Config texts may differ only in the step budget.

    The trajectory never depends on `steps` (it is a stopping criterion;
    the lr schedule uses warmup only), so extending a run is a valid
    resume. Everything else must match exactly.
    """

    def scrub(text: str):
        return [ln for ln in text.splitlines() if not ln.startswith("steps = ")]

    return scrub(a) == scrub(b)


def fit(run_dir, mcfg: mdl.ModelConfig, tcfg: TrainConfig,
        dcfg: flow.DrawConfig, spec: pyr.ScaleSpec, dataset,
        config_text: str, resume=None, progress=None) -> TrainState:
    """Run (or resume) training; writes checkpoints and train_log.csv.

    `spec` must already carry resolved level stds when standardizing.
    `resume` is a checkpoint path; its embedded config must match
    config_text except for the step budget. `progress` is an optional
    callable(step, metrics).
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if spec.num_levels != mcfg.num_levels or dcfg.num_levels != mcfg.num_levels:
        raise ConfigError("ladder, model, and draw config disagree on levels")

    levels = prepare_levels(dataset, spec)
    labels = dataset.labels if mcfg.num_classes > 0 else None
    if mcfg.num_classes > 0 and dataset.num_classes > mcfg.num_classes:
        raise ConfigError(
            f"dataset has {dataset.num_classes} classes, model expects "
            f"{mcfg.num_classes}"
        )

    state = init_state(mcfg, tcfg)
    log_path = run_dir / "train_log.csv"
    rows = []
    if resume is not None:
        loaded = ckpt.load(resume)
        if not _resume_compatible(loaded.config_text, config_text):
            raise ConfigError(
                "resume checkpoint was written by a different config"
            )
        restore_state(state, loaded)
        rows = _read_log(log_path, state.step)

    if state.step > tcfg.steps:
        raise ConfigError(
            f"checkpoint is at step {state.step}, beyond steps={tcfg.steps}"
        )

    while state.step < tcfg.steps:
        t0 = time.perf_counter()
        metrics = train_step(state, mcfg, tcfg, dcfg, levels, labels)
        wall_ms = (time.perf_counter() - t0) * 1e3
        rows.append([state.step, repr(metrics["loss"]),
                     repr(metrics["grad_norm"]), repr(metrics["lr"]),
                     f"{wall_ms:.3f}"])
        if progress is not None:
            progress(state.step, metrics)
        if not math.isfinite(metrics["loss"]):
            ckpt.save(checkpoint_path(run_dir, state.step), state.step,
                      state_tensors(state), config_text)
            _write_log(log_path, rows)
            raise RuntimeAbort(
                f"non-finite loss {metrics['loss']} at step {state.step}; "
                "state checkpointed for inspection"
            )
        if state.step % tcfg.checkpoint_every == 0 or state.step == tcfg.steps:
            ckpt.save(checkpoint_path(run_dir, state.step), state.step,
                      state_tensors(state), config_text)
            _write_log(log_path, rows)
    _write_log(log_path, rows)
    final = checkpoint_path(run_dir, state.step)
    if not final.exists():
        ckpt.save(final, state.step, state_tensors(state), config_text)
    return state
