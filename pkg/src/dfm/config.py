"""Run configuration: INI-style text <-> validated dataclasses.

One file describes a complete run (ladder, model, optimizer, timestep
sampler, sampling defaults, dataset, output dir).  parse -> serialize ->
parse is the identity, and the serialized text doubles as the checkpoint
config digest payload, so floats are written with repr for exact
round-trips.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace
from typing import Optional

from . import data
from . import flow
from . import model as mdl
from . import pyramid as pyr
from . import sampler as smp
from . import train as tr
from .errors import ConfigError

__all__ = ["RunConfig", "parse_config", "serialize_config", "load_config",
           "default_config", "with_value", "with_resolved_stds"]


@dataclass(frozen=True)
class RunConfig:
    scales: pyr.ScaleSpec
    model: mdl.ModelConfig
    train: tr.TrainConfig
    draws: flow.DrawConfig
    sampling: smp.SamplerConfig
    data_kind: str = "synthetic"
    synthetic: Optional[data.SyntheticSpec] = None
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        s, m = self.scales, self.model
        if m.resolutions != s.resolutions or m.channels != s.channels:
            raise ConfigError("model and scale ladder disagree on "
                              "resolutions/channels")
        n = s.num_levels
        if len(self.draws.stage_probs) != n:
            raise ConfigError(f"stage_probs needs {n} entries")
        if len(self.sampling.budgets) != n:
            raise ConfigError(f"budgets needs {n} entries")
        if self.draws.tied != (self.train.variant == "tied"):
            raise ConfigError("tied draws are selected via variant=tied")
        if self.data_kind == "synthetic":
            if self.synthetic is None:
                raise ConfigError("synthetic data spec missing")
            if self.synthetic.resolution != s.finest or \
                    self.synthetic.channels != s.channels:
                raise ConfigError("synthetic data does not match the ladder")
            if m.num_classes and m.num_classes != self.synthetic.num_classes:
                raise ConfigError("model and synthetic data disagree on "
                                  "num_classes")
        elif self.data_kind == "directory":
            if not self.data_dir:
                raise ConfigError("data kind 'directory' needs path")
        else:
            raise ConfigError(f"unknown data kind {self.data_kind!r}")


# ---------------------------------------------------------------- scalars

def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    raise ConfigError(f"expected true/false, got {raw!r}")


def _pairs(raw: str) -> tuple:
    out = []
    for item in raw.split(","):
        h, sep, w = item.strip().partition("x")
        if not sep:
            raise ConfigError(f"expected HxW entries, got {raw!r}")
        out.append((int(h), int(w)))
    return tuple(out)


def _ints(raw: str) -> tuple:
    return tuple(int(v.strip()) for v in raw.split(","))


def _floats(raw: str) -> tuple:
    return tuple(float(v.strip()) for v in raw.split(","))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{h}x{w}" for h, w in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


_SCHEMA = {
    "scales": ("resolutions", "channels", "standardize", "stds"),
    "model": ("patch_sizes", "width", "depth", "heads", "num_classes",
              "class_drop_prob", "specialization", "precondition",
              "sigma_data", "time_embed_dim"),
    "train": ("steps", "batch", "lr", "warmup_steps", "beta1", "beta2",
              "eps", "weight_decay", "grad_clip", "ema_beta", "seed",
              "variant", "checkpoint_every", "std_probe"),
    "timestep_sampler": ("stage_probs", "current_loc", "current_scale",
                         "prev_loc", "prev_scale"),
    "sampling": ("budgets", "tau", "cfg_weight", "previews"),
    "data": ("kind", "path", "size", "num_classes", "coarse",
             "lf_amplitude", "hf_amplitude", "param_seed"),
    "output": ("dir",),
}


def _check_schema(sections: dict) -> None:
    for name, body in sections.items():
        if name not in _SCHEMA:
            raise ConfigError(f"unknown config section [{name}]")
        for key in body:
            if key not in _SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")


def _default_patches(resolutions) -> tuple:
    # coarsest level sets the token grid; finer levels patch down to it
    h1, w1 = resolutions[0]
    patches = []
    for h, w in resolutions:
        if h % h1 or w % w1 or h // h1 != w // w1:
            raise ConfigError(
                "cannot derive patch sizes for this ladder; set "
                "model.patch_sizes explicitly"
            )
        patches.append(h // h1)
    return tuple(patches)


def _from_sections(sections: dict) -> RunConfig:
    _check_schema(sections)
    sc = sections.get("scales", {})
    mo = sections.get("model", {})
    tn = sections.get("train", {})
    ts = sections.get("timestep_sampler", {})
    sa = sections.get("sampling", {})
    da = sections.get("data", {})
    ou = sections.get("output", {})

    resolutions = _pairs(sc.get("resolutions", "8x8, 16x16"))
    channels = int(sc.get("channels", "1"))
    stds_raw = sc.get("stds", "auto").strip()
    scales = pyr.ScaleSpec(
        resolutions=resolutions,
        channels=channels,
        standardize=_bool(sc.get("standardize", "true")),
        level_stds=None if stds_raw.lower() == "auto" else _floats(stds_raw),
    )

    model = mdl.ModelConfig(
        resolutions=resolutions,
        patch_sizes=(_ints(mo["patch_sizes"]) if "patch_sizes" in mo
                     else _default_patches(resolutions)),
        channels=channels,
        width=int(mo.get("width", "128")),
        depth=int(mo.get("depth", "4")),
        heads=int(mo.get("heads", "0")),
        num_classes=int(mo.get("num_classes", "4")),
        class_drop_prob=float(mo.get("class_drop_prob", "0.1")),
        specialization=mo.get("specialization", "none").strip(),
        precondition=_bool(mo.get("precondition", "true")),
        sigma_data=float(mo.get("sigma_data", "1.0")),
        time_embed_dim=int(mo.get("time_embed_dim", "256")),
    )

    train = tr.TrainConfig(
        steps=int(tn.get("steps", "5000")),
        batch=int(tn.get("batch", "64")),
        lr=float(tn.get("lr", "0.0001")),
        warmup_steps=int(tn.get("warmup_steps", "500")),
        beta1=float(tn.get("beta1", "0.9")),
        beta2=float(tn.get("beta2", "0.99")),
        eps=float(tn.get("eps", "1e-08")),
        weight_decay=float(tn.get("weight_decay", "0.01")),
        grad_clip=float(tn.get("grad_clip", "1.0")),
        ema_beta=float(tn.get("ema_beta", "0.999")),
        seed=int(tn.get("seed", "0")),
        variant=tn.get("variant", "dfm").strip(),
        checkpoint_every=int(tn.get("checkpoint_every", "1000")),
        std_probe=int(tn.get("std_probe", "1024")),
    )

    default_probs = ", ".join(["0.9"] + ["0.1"] * (len(resolutions) - 1)) \
        if len(resolutions) > 1 else "1.0"
    draws = tr.draw_config(
        model, train, _floats(ts.get("stage_probs", default_probs)),
        current_loc=float(ts.get("current_loc", "0.0")),
        current_scale=float(ts.get("current_scale", "1.0")),
        prev_loc=float(ts.get("prev_loc", "1.5")),
        prev_scale=float(ts.get("prev_scale", "1.0")),
    )

    default_budgets = ", ".join(["30"] + ["10"] * (len(resolutions) - 1)) \
        if len(resolutions) > 1 else "40"
    sampling = smp.SamplerConfig(
        budgets=_ints(sa.get("budgets", default_budgets)),
        tau=float(sa.get("tau", "0.7")),
        cfg_weight=float(sa.get("cfg_weight", "1.0")),
        previews=_bool(sa.get("previews", "false")),
    )

    kind = da.get("kind", "synthetic").strip()
    synthetic = None
    data_dir = None
    if kind == "synthetic":
        for key in ("path",):
            if key in da:
                raise ConfigError(f"key {key!r} is not valid for synthetic data")
        synthetic = data.SyntheticSpec(
            size=int(da.get("size", "4096")),
            resolution=resolutions[-1],
            channels=channels,
            num_classes=int(da.get("num_classes", "4")),
            coarse=_pairs(da.get("coarse", _fmt((resolutions[0],))))[0],
            lf_amplitude=float(da.get("lf_amplitude", "0.8")),
            hf_amplitude=float(da.get("hf_amplitude", "0.3")),
            param_seed=int(da.get("param_seed", "0")),
        )
    elif kind == "directory":
        for key in ("size", "num_classes", "coarse", "lf_amplitude",
                    "hf_amplitude", "param_seed"):
            if key in da:
                raise ConfigError(f"key {key!r} is not valid for directory data")
        data_dir = da.get("path", "").strip()

    return RunConfig(scales=scales, model=model, train=train, draws=draws,
                     sampling=sampling, data_kind=kind, synthetic=synthetic,
                     data_dir=data_dir, out_dir=ou.get("dir", "").strip() or None)


def _to_sections(cfg: RunConfig) -> dict:
    s, m, t, d, sa = cfg.scales, cfg.model, cfg.train, cfg.draws, cfg.sampling
    sections = {
        "scales": {
            "resolutions": _fmt(s.resolutions),
            "channels": _fmt(s.channels),
            "standardize": _fmt(s.standardize),
            "stds": "auto" if s.level_stds is None
                    else _fmt(tuple(float(v) for v in s.level_stds)),
        },
        "model": {
            "patch_sizes": _fmt(m.patch_sizes),
            "width": _fmt(m.width),
            "depth": _fmt(m.depth),
            "heads": _fmt(m.heads),
            "num_classes": _fmt(m.num_classes),
            "class_drop_prob": _fmt(m.class_drop_prob),
            "specialization": m.specialization,
            "precondition": _fmt(m.precondition),
            "sigma_data": _fmt(m.sigma_data),
            "time_embed_dim": _fmt(m.time_embed_dim),
        },
        "train": {
            "steps": _fmt(t.steps),
            "batch": _fmt(t.batch),
            "lr": _fmt(t.lr),
            "warmup_steps": _fmt(t.warmup_steps),
            "beta1": _fmt(t.beta1),
            "beta2": _fmt(t.beta2),
            "eps": _fmt(t.eps),
            "weight_decay": _fmt(t.weight_decay),
            "grad_clip": _fmt(t.grad_clip),
            "ema_beta": _fmt(t.ema_beta),
            "seed": _fmt(t.seed),
            "variant": t.variant,
            "checkpoint_every": _fmt(t.checkpoint_every),
            "std_probe": _fmt(t.std_probe),
        },
        "timestep_sampler": {
            "stage_probs": _fmt(d.stage_probs),
            "current_loc": _fmt(d.current_loc),
            "current_scale": _fmt(d.current_scale),
            "prev_loc": _fmt(d.prev_loc),
            "prev_scale": _fmt(d.prev_scale),
        },
        "sampling": {
            "budgets": _fmt(sa.budgets),
            "tau": _fmt(sa.tau),
            "cfg_weight": _fmt(sa.cfg_weight),
            "previews": _fmt(sa.previews),
        },
    }
    if cfg.data_kind == "synthetic":
        sy = cfg.synthetic
        sections["data"] = {
            "kind": "synthetic",
            "size": _fmt(sy.size),
            "num_classes": _fmt(sy.num_classes),
            "coarse": _fmt((sy.coarse,)),
            "lf_amplitude": _fmt(sy.lf_amplitude),
            "hf_amplitude": _fmt(sy.hf_amplitude),
            "param_seed": _fmt(sy.param_seed),
        }
    else:
        sections["data"] = {"kind": "directory", "path": cfg.data_dir}
    if cfg.out_dir:
        sections["output"] = {"dir": cfg.out_dir}
    return sections


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    return _from_sections(sections)


def serialize_config(cfg: RunConfig) -> str:
    out = io.StringIO()
    for name, body in _to_sections(cfg).items():
        out.write(f"[{name}]\n")
        for key, value in body.items():
            out.write(f"{key} = {value}\n")
        out.write("\n")
    return out.getvalue()


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def default_config() -> RunConfig:
    return _from_sections({})


def with_value(cfg: RunConfig, dotted: str, raw: str) -> RunConfig:
    """New config with one `section.key` replaced by a raw string value.

    Values pass through the same parsing and validation as a config file,
    so sweep grids get full type and consistency checking up front.
    """
    section, sep, key = dotted.partition(".")
    sections = _to_sections(cfg)
    if not sep or section not in _SCHEMA or key not in _SCHEMA[section]:
        raise ConfigError(f"unknown config parameter {dotted!r}")
    sections.setdefault(section, {})[key] = raw
    return _from_sections(sections)


def with_resolved_stds(cfg: RunConfig, stds) -> RunConfig:
    """Freeze estimated level stds into the config (for checkpoint digests)."""
    scales = pyr.ScaleSpec(
        resolutions=cfg.scales.resolutions,
        channels=cfg.scales.channels,
        standardize=cfg.scales.standardize,
        level_stds=tuple(float(v) for v in stds),
    )
    return replace(cfg, scales=scales)
