"""Multiscale denoising transformer over pyramid levels.

All levels are patchified onto one shared token grid (patch sizes are
chosen so every scale yields the same grid), embedded per scale, and
summed. Conditioning is per-scale timestep embeddings (summed), a learned
stage-index embedding, and an optional class embedding with a null row for
classifier-free guidance. Blocks are pre-norm attention/MLP with
adaLN-Zero modulation (shift/scale/gate per branch, regressed from the
conditioning vector by zero-initialized linears) and 2D axial rotary
position embeddings on queries and keys. Per-scale zero-initialized output
heads unpatchify back to velocity fields.

Inputs can be preconditioned: corrupted levels are scaled by
c_in(t) = 1/sqrt((t*sigma_data)^2 + (1-t)^2) so the network always sees
roughly unit variance, and raw head outputs are scaled by
c_out = sqrt(sigma_data^2 + 1), the std of the velocity target.

Optional stage specialization keeps per-stage expert copies of one
parameter group (or all); the effective weight is the mean of base and the
expert for the current stage.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

SPECIALIZE_GROUPS = ("modulation", "projection", "conditioning", "attention", "mlp")
TIME_SCALE = 1000.0
LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    resolutions: tuple  # ((h1, w1), ..., (hS, wS)), coarse to fine
    patch_sizes: tuple  # one per level
    channels: int = 1
    width: int = 128
    depth: int = 4
    heads: int = 0  # 0 resolves to width // 64 (at least 1)
    num_classes: int = 0
    class_drop_prob: float = 0.1
    specialization: str = "none"
    precondition: bool = True
    sigma_data: float = 1.0
    time_embed_dim: int = 256

    def __post_init__(self):
        res = tuple((int(h), int(w)) for h, w in self.resolutions)
        patches = tuple(int(p) for p in self.patch_sizes)
        object.__setattr__(self, "resolutions", res)
        object.__setattr__(self, "patch_sizes", patches)
        if len(res) < 1 or len(patches) != len(res):
            raise ConfigError("need one patch size per resolution")
        grids = []
        for (h, w), p in zip(res, patches):
            if p < 1 or h % p or w % p:
                raise ConfigError(f"patch size {p} does not tile {(h, w)}")
            grids.append((h // p, w // p))
        if any(g != grids[0] for g in grids):
            raise ConfigError(
                f"patchified token grids differ across scales: {grids}; "
                "scales must align on one grid"
            )
        if self.heads == 0:
            object.__setattr__(self, "heads", max(1, self.width // 64))
        if self.width < 1 or self.depth < 1:
            raise ConfigError("width and depth must be positive")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if (self.width // self.heads) % 4:
            raise ConfigError(
                "head dim must be a multiple of 4 for axial rotary embeddings"
            )
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if self.num_classes < 0:
            raise ConfigError("num_classes must be >= 0")
        if not 0.0 <= self.class_drop_prob <= 1.0:
            raise ConfigError("class_drop_prob must lie in [0, 1]")
        ok = ("none", "full") + SPECIALIZE_GROUPS
        if self.specialization not in ok:
            raise ConfigError(f"specialization must be one of {ok}")
        if self.sigma_data <= 0:
            raise ConfigError("sigma_data must be positive")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ConfigError("time_embed_dim must be even and >= 2")

    @property
    def num_levels(self) -> int:
        return len(self.resolutions)

    @property
    def grid(self):
        h, w = self.resolutions[0]
        p = self.patch_sizes[0]
        return (h // p, w // p)

    @property
    def tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def null_class(self) -> int:
        return self.num_classes


def param_group(name: str) -> str:
    """Specialization group of a base parameter name."""
    if ".mod." in name or name.startswith("final.mod"):
        return "modulation"
    if name.startswith(("patch.", "head.")):
        return "projection"
    if name.startswith(("tmlp.", "stage_emb", "class_emb")):
        return "conditioning"
    if ".qkv." in name or ".attn_out." in name:
        return "attention"
    if ".mlp." in name:
        return "mlp"
    raise ValueError(f"unknown parameter {name!r}")


def _in_group(name: str, mode: str) -> bool:
    return mode == "full" or param_group(name) == mode


def init_params(cfg: ModelConfig, rng, dtype=np.float32):
    """Build the parameter dict. Order of creation is fixed, so a seeded
    generator gives identical parameters every time."""
    W = cfg.width
    params = {}

    def xavier(fan_in, fan_out, shape):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    def put(name, value):
        params[name] = Tensor(np.ascontiguousarray(value, dtype=dtype),
                              requires_grad=True)

    for s in range(1, cfg.num_levels + 1):
        d_in = cfg.channels * cfg.patch_sizes[s - 1] ** 2
        put(f"patch.{s}.w", xavier(d_in, W, (d_in, W)))
        put(f"patch.{s}.b", np.zeros(W))
    for s in range(1, cfg.num_levels + 1):
        put(f"tmlp.{s}.w1", rng.normal(0.0, 0.02, (cfg.time_embed_dim, W)))
        put(f"tmlp.{s}.b1", np.zeros(W))
        put(f"tmlp.{s}.w2", rng.normal(0.0, 0.02, (W, W)))
        put(f"tmlp.{s}.b2", np.zeros(W))
    put("stage_emb", rng.normal(0.0, 0.02, (cfg.num_levels, W)))
    if cfg.num_classes > 0:
        put("class_emb", rng.normal(0.0, 0.02, (cfg.num_classes + 1, W)))
    for i in range(cfg.depth):
        put(f"blocks.{i}.qkv.w", xavier(W, 3 * W, (W, 3 * W)))
        put(f"blocks.{i}.qkv.b", np.zeros(3 * W))
        put(f"blocks.{i}.attn_out.w", xavier(W, W, (W, W)))
        put(f"blocks.{i}.attn_out.b", np.zeros(W))
        put(f"blocks.{i}.mlp.w1", xavier(W, 4 * W, (W, 4 * W)))
        put(f"blocks.{i}.mlp.b1", np.zeros(4 * W))
        put(f"blocks.{i}.mlp.w2", xavier(4 * W, W, (4 * W, W)))
        put(f"blocks.{i}.mlp.b2", np.zeros(W))
        # adaLN-Zero: modulation regressors start at zero so every block
        # is the identity at init
        put(f"blocks.{i}.mod.w", np.zeros((W, 6 * W)))
        put(f"blocks.{i}.mod.b", np.zeros(6 * W))
    put("final.mod.w", np.zeros((W, 2 * W)))
    put("final.mod.b", np.zeros(2 * W))
    for s in range(1, cfg.num_levels + 1):
        d_out = cfg.channels * cfg.patch_sizes[s - 1] ** 2
        put(f"head.{s}.w", np.zeros((W, d_out)))
        put(f"head.{s}.b", np.zeros(d_out))

    if cfg.specialization != "none":
        base = list(params.items())
        for st in range(1, cfg.num_levels + 1):
            for name, p in base:
                if _in_group(name, cfg.specialization):
                    params[f"expert{st}.{name}"] = Tensor(
                        p.data.copy(), requires_grad=True
                    )
    return params


def count_params(params) -> int:
    return int(sum(p.data.size for p in params.values()))


def specialize(params, cfg: ModelConfig, stage: int):
    """Effective weights for one stage: mean of base and stage expert for
    the specialized group, base weights elsewhere."""
    if not 1 <= stage <= cfg.num_levels:
        raise ValueError(f"stage {stage} outside 1..{cfg.num_levels}")
    out = {}
    for name, p in params.items():
        if name.startswith("expert"):
            continue
        if cfg.specialization != "none" and _in_group(name, cfg.specialization):
            out[name] = ad.scale(ad.add(p, params[f"expert{stage}.{name}"]), 0.5)
        else:
            out[name] = p
    return out


def sinusoidal_features(t, dim: int, dtype=np.float32, max_period=10000.0):
    """Classic sin/cos features of t (scaled by TIME_SCALE), shape (B, dim)."""
    t = np.asarray(t, dtype=np.float64) * TIME_SCALE
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(dtype)


_ROPE_CACHE = {}


def axial_rope_tables(grid, head_dim: int, dtype=np.float32, base=10000.0):
    """cos/sin tables (tokens, head_dim//2) for a 2D token grid.

    Rotate-half convention: entry k of the half-table rotates the pair
    (k, k + head_dim//2). The first quarter of the entries carry the row
    coordinate, the next quarter the column coordinate.
    """
    key = (grid, head_dim, np.dtype(dtype).str, base)
    hit = _ROPE_CACHE.get(key)
    if hit is not None:
        return hit
    gh, gw = grid
    quarter = head_dim // 4
    freqs = base ** (-np.arange(quarter, dtype=np.float64) / quarter)
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    rows = rows.reshape(-1).astype(np.float64)
    cols = cols.reshape(-1).astype(np.float64)
    ang = np.concatenate(
        [rows[:, None] * freqs[None, :], cols[:, None] * freqs[None, :]], axis=1
    )
    tables = (np.cos(ang).astype(dtype), np.sin(ang).astype(dtype))
    _ROPE_CACHE[key] = tables
    return tables


def _patchify(x: Tensor, patch: int, grid, channels: int) -> Tensor:
    b = x.data.shape[0]
    gh, gw = grid
    x = ad.reshape(x, (b, channels, gh, patch, gw, patch))
    x = ad.transpose(x, (0, 2, 4, 1, 3, 5))
    return ad.reshape(x, (b, gh * gw, channels * patch * patch))


def _unpatchify(x: Tensor, patch: int, grid, channels: int) -> Tensor:
    b = x.data.shape[0]
    gh, gw = grid
    x = ad.reshape(x, (b, gh, gw, channels, patch, patch))
    x = ad.transpose(x, (0, 3, 1, 4, 2, 5))
    return ad.reshape(x, (b, channels, gh * patch, gw * patch))


def c_in(t, sigma_data: float):
    """Input preconditioning factor at timestep t (elementwise)."""
    t = np.asarray(t)
    return 1.0 / np.sqrt((t * sigma_data) ** 2 + (1.0 - t) ** 2)


def c_out(sigma_data: float) -> float:
    """Output scale: std of the velocity target data - noise."""
    return math.sqrt(sigma_data**2 + 1.0)


def resolve_labels(cfg: ModelConfig, batch: int, labels, drop_uniform=None):
    """Embedding row per example; None or dropped labels go to the null row."""
    if cfg.num_classes == 0:
        return None
    if labels is None:
        idx = np.full(batch, cfg.null_class, dtype=np.int64)
    else:
        idx = np.asarray(labels, dtype=np.int64)
        if idx.shape != (batch,):
            raise ValueError(f"labels shape {idx.shape}, expected ({batch},)")
        if idx.min() < 0 or idx.max() > cfg.num_classes:
            raise ValueError("label outside [0, num_classes]")
    if drop_uniform is not None:
        idx = np.where(np.asarray(drop_uniform) < cfg.class_drop_prob,
                       cfg.null_class, idx)
    return idx


def _check_forward_args(cfg, levels, t, mask, stage):
    if len(levels) != cfg.num_levels:
        raise ValueError(f"got {len(levels)} levels, expected {cfg.num_levels}")
    b = levels[0].shape[0]
    for s, lvl in enumerate(levels, start=1):
        h, w = cfg.resolutions[s - 1]
        if lvl.shape != (b, cfg.channels, h, w):
            raise ValueError(
                f"level {s} has shape {lvl.shape}, expected "
                f"{(b, cfg.channels, h, w)}"
            )
    if t.shape != (b, cfg.num_levels):
        raise ValueError(f"t has shape {t.shape}, expected {(b, cfg.num_levels)}")
    if mask.shape != (cfg.num_levels,):
        raise ValueError("mask must be one shared row (S,); batch by stage")
    ones = int(mask.sum())
    if not np.array_equal(mask, (np.arange(1, cfg.num_levels + 1) <= ones)):
        raise ValueError(f"mask must be a prefix of ones, got {mask}")
    if ones != stage:
        raise ValueError(f"stage {stage} disagrees with mask {mask}")
    return b


def forward(params, cfg: ModelConfig, levels, t, mask, stage: int,
            labels=None, drop_uniform=None):
    """Predict per-level velocities.

    levels: list of (B, C, h_s, w_s) arrays (already corrupted, and
    standardized if the pipeline standardizes). t: (B, S) timesteps.
    mask: (S,) 0/1 prefix shared by the whole call; masked levels
    contribute only their patch-embedding bias and their outputs are
    returned as None. stage: number of unmasked levels; selects the stage
    embedding and, when enabled, the specialization expert.

    Returns a list of per-level Tensors, None at masked positions.
    """
    t = np.asarray(t, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    b = _check_forward_args(cfg, levels, t, mask, stage)
    dtype = params["patch.1.w"].data.dtype
    weights = specialize(params, cfg, stage)
    Wd = cfg.width
    grid = cfg.grid

    # token embedding: sum of per-scale patch embeddings
    tok = None
    for s in range(1, cfg.num_levels + 1):
        if mask[s - 1]:
            x = np.asarray(levels[s - 1], dtype=dtype)
            if cfg.precondition:
                f = c_in(t[:, s - 1], cfg.sigma_data)[:, None, None, None]
                x = x * f.astype(dtype)
            xp = _patchify(Tensor(x), cfg.patch_sizes[s - 1], grid, cfg.channels)
            e = ad.linear(xp, weights[f"patch.{s}.w"], weights[f"patch.{s}.b"])
        else:
            e = ad.reshape(weights[f"patch.{s}.b"], (1, 1, Wd))
        tok = e if tok is None else ad.add(tok, e)

    # conditioning vector: timestep embedders (all scales) + stage + class
    c = None
    for s in range(1, cfg.num_levels + 1):
        feats = sinusoidal_features(t[:, s - 1], cfg.time_embed_dim, dtype)
        h = ad.linear(Tensor(feats), weights[f"tmlp.{s}.w1"], weights[f"tmlp.{s}.b1"])
        h = ad.linear(ad.silu(h), weights[f"tmlp.{s}.w2"], weights[f"tmlp.{s}.b2"])
        c = h if c is None else ad.add(c, h)
    c = ad.add(c, ad.take_rows(weights["stage_emb"],
                               np.full(b, stage - 1, dtype=np.int64)))
    idx = resolve_labels(cfg, b, labels, drop_uniform)
    if idx is not None:
        c = ad.add(c, ad.take_rows(weights["class_emb"], idx))
    csil = ad.silu(c)

    cos, sin = axial_rope_tables(grid, cfg.head_dim, dtype)
    for i in range(cfg.depth):
        tok = _block(tok, csil, weights, i, cfg, cos, sin, b)

    mod = ad.linear(csil, weights["final.mod.w"], weights["final.mod.b"])
    sh = ad.reshape(ad.slice_axis(mod, 1, 0, Wd), (b, 1, Wd))
    sc = ad.reshape(ad.slice_axis(mod, 1, Wd, 2 * Wd), (b, 1, Wd))
    x = ad.add(ad.mul(ad.layernorm(tok, LN_EPS), ad.shift(sc, 1.0)), sh)

    outs = []
    for s in range(1, cfg.num_levels + 1):
        if not mask[s - 1]:
            outs.append(None)
            continue
        o = ad.linear(x, weights[f"head.{s}.w"], weights[f"head.{s}.b"])
        o = _unpatchify(o, cfg.patch_sizes[s - 1], grid, cfg.channels)
        if cfg.precondition:
            o = ad.scale(o, c_out(cfg.sigma_data))
        outs.append(o)
    return outs


def _block(tok, csil, weights, i, cfg, cos, sin, b):
    Wd = cfg.width
    mod = ad.linear(csil, weights[f"blocks.{i}.mod.w"], weights[f"blocks.{i}.mod.b"])
    parts = [
        ad.reshape(ad.slice_axis(mod, 1, k * Wd, (k + 1) * Wd), (b, 1, Wd))
        for k in range(6)
    ]
    sh1, sc1, g1, sh2, sc2, g2 = parts

    h = ad.add(ad.mul(ad.layernorm(tok, LN_EPS), ad.shift(sc1, 1.0)), sh1)
    tok = ad.add(tok, ad.mul(g1, _attention(h, weights, i, cfg, cos, sin)))
    h = ad.add(ad.mul(ad.layernorm(tok, LN_EPS), ad.shift(sc2, 1.0)), sh2)
    m = ad.linear(h, weights[f"blocks.{i}.mlp.w1"], weights[f"blocks.{i}.mlp.b1"])
    m = ad.linear(ad.gelu(m), weights[f"blocks.{i}.mlp.w2"],
                  weights[f"blocks.{i}.mlp.b2"])
    return ad.add(tok, ad.mul(g2, m))


def _attention(h, weights, i, cfg, cos, sin):
    b, tcount, Wd = h.data.shape
    nh, hd = cfg.heads, cfg.head_dim
    qkv = ad.linear(h, weights[f"blocks.{i}.qkv.w"], weights[f"blocks.{i}.qkv.b"])
    qkv = ad.reshape(qkv, (b, tcount, 3, nh, hd))
    qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, nh, T, hd)

    def pick(k):
        return ad.reshape(ad.slice_axis(qkv, 0, k, k + 1), (b, nh, tcount, hd))

    q = ad.rope(pick(0), cos, sin)
    k = ad.rope(pick(1), cos, sin)
    v = pick(2)
    att = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    o = ad.matmul(ad.softmax_last(att), v)
    o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (b, tcount, Wd))
    return ad.linear(o, weights[f"blocks.{i}.attn_out.w"],
                     weights[f"blocks.{i}.attn_out.b"])
