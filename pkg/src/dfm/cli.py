"""Command-line surface: decompose, train, sample, eval, ablate.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.  The
default output root is $DFM_OUT (falling back to ./dfm_out); a config's
[output] dir takes precedence.  Heavy modules are imported inside the
handlers so `--help` stays fast.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, RuntimeAbort

SAMPLE_CHUNK = 128


def _out_root() -> Path:
    return Path(os.environ.get("DFM_OUT") or "dfm_out")


def _load_cfg(args):
    from . import config as cf

    return cf.load_config(args.config) if args.config else cf.default_config()


def _dataset(cfg):
    from . import data

    if cfg.data_kind == "synthetic":
        return data.generate_synthetic(cfg.synthetic)
    return data.load_directory(cfg.data_dir, cfg.scales.finest,
                               cfg.scales.channels)


def _ext(channels: int) -> str:
    return "pgm" if channels == 1 else "ppm"


# ------------------------------------------------------------- decompose

def cmd_decompose(args):
    from . import imageio as iio
    from . import pyramid as pyr

    cfg = _load_cfg(args)
    img = iio.read_image(args.input)
    expected = (cfg.scales.channels,) + cfg.scales.finest
    if img.shape != expected:
        raise RuntimeAbort(
            f"input {args.input} has shape {img.shape}, config expects "
            f"{expected}"
        )
    out = Path(args.out) if args.out else _out_root() / "decompose"
    out.mkdir(parents=True, exist_ok=True)

    levels = pyr.decompose(img[None], cfg.scales)
    recon = pyr.reconstruct(levels, cfg.scales)
    err = float(np.abs(recon - img[None]).max())

    report = [f"input: {args.input}", f"max reconstruction error: {err:.3e}"]
    ext = _ext(cfg.scales.channels)
    for s, lv in enumerate(levels, start=1):
        plane = lv[0]
        if s == 1:
            report.append(f"level{s}: identity (low band)")
        else:
            scale = float(np.abs(plane).max()) or 1.0
            plane = plane / scale
            report.append(f"level{s}: display = value / {scale!r}")
        iio.write_image(out / f"level{s}.{ext}", plane)
    (out / "decompose_report.txt").write_text("\n".join(report) + "\n")
    print(f"max reconstruction error: {err:.3e}")
    print(f"wrote {len(levels)} level images to {out}")


# ----------------------------------------------------------------- train

def _train_run(cfg, run_dir: Path, resume, quiet: bool):
    """Resolve stds, persist the frozen config, and fit. Returns state."""
    from . import config as cf
    from . import train as tr

    ds = _dataset(cfg)
    spec = tr.resolve_level_stds(ds, cfg.scales, cfg.train.std_probe)
    if spec.level_stds is not None and cfg.scales.level_stds is None:
        cfg = cf.with_resolved_stds(cfg, spec.level_stds)
    config_text = cf.serialize_config(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(config_text)

    every = max(1, cfg.train.steps // 20)

    def progress(step, metrics):
        if not quiet and (step % every == 0 or step == cfg.train.steps):
            print(f"step {step}/{cfg.train.steps} "
                  f"loss {metrics['loss']:.4f} lr {metrics['lr']:.2e}")

    state = tr.fit(run_dir, cfg.model, cfg.train, cfg.draws, cfg.scales, ds,
                   config_text, resume=resume, progress=progress)
    return cfg, state


def cmd_train(args):
    from . import config as cf
    from . import train as tr

    cfg = _load_cfg(args)
    if args.steps is not None:
        cfg = cf.with_value(cfg, "train.steps", str(args.steps))
    if args.variant is not None:
        cfg = cf.with_value(cfg, "train.variant", args.variant)
    if args.seed is not None:
        cfg = cf.with_value(cfg, "train.seed", str(args.seed))

    run_dir = Path(cfg.out_dir) if cfg.out_dir else _out_root() / "run"
    resume = Path(args.checkpoint) if args.checkpoint \
        else tr.find_latest_checkpoint(run_dir)
    if resume is not None:
        print(f"resuming from {resume}")
    _, state = _train_run(cfg, run_dir, resume, args.quiet)
    print(f"trained to step {state.step}; artifacts in {run_dir}")


# ---------------------------------------------------------------- sample

def _checkpoint_params(ck, mcfg, namespace: str):
    """Tensors for one weight namespace, validated against the model."""
    from . import autodiff as ad
    from . import model as mdl

    expected = mdl.init_params(mcfg, np.random.default_rng(0))
    have = {k.split("/", 1)[1] for k in ck.tensors if k.startswith(namespace + "/")}
    missing = sorted(set(expected) - have)
    extra = sorted(have - set(expected))
    if missing or extra:
        raise ConfigError(
            f"checkpoint does not match the model: missing {missing}, "
            f"unexpected {extra}"
        )
    params = {}
    for name, ref in expected.items():
        arr = ck.tensors[f"{namespace}/{name}"]
        if arr.shape != ref.data.shape:
            raise ConfigError(
                f"checkpoint tensor {name} has shape {arr.shape}, model "
                f"expects {ref.data.shape}"
            )
        params[name] = ad.Tensor(arr)
    return params


def _generate_batches(params, cfg, count, seed, labels, out_dir):
    """Chunked generation; writes images (and previews) with stable names."""
    from . import imageio as iio
    from . import sampler as smp

    rng = np.random.default_rng(seed)
    ext = _ext(cfg.scales.channels)
    tied = cfg.train.variant == "tied"
    images = []
    for lo in range(0, count, SAMPLE_CHUNK):
        n = min(SAMPLE_CHUNK, count - lo)
        lab = labels[lo:lo + n] if labels is not None else None
        res = smp.generate(params, cfg.model, cfg.scales, n, rng,
                           cfg.sampling, labels=lab, tied=tied)
        images.append(res.images)
        for i in range(n):
            cls = "u" if lab is None else str(int(lab[i]))
            stem = f"sample_seed{seed}_class{cls}_{lo + i:05d}"
            iio.write_image(out_dir / f"{stem}.{ext}", res.images[i])
            for stage, batch in res.previews:
                iio.write_image(
                    out_dir / f"{stem}_preview_stage{stage}.{ext}", batch[i]
                )
    return np.concatenate(images, axis=0)


def _sample_labels(mcfg, count, label):
    if mcfg.num_classes == 0:
        if label is not None:
            raise ConfigError("--label given but the model is unconditional")
        return None
    if label is not None:
        if not 0 <= label < mcfg.num_classes:
            raise ConfigError(
                f"--label {label} out of range for {mcfg.num_classes} classes"
            )
        return np.full(count, label, dtype=np.int64)
    return (np.arange(count) % mcfg.num_classes).astype(np.int64)


def cmd_sample(args):
    from . import ckpt
    from . import config as cf
    from . import train as tr

    if args.checkpoint:
        ck_path = Path(args.checkpoint)
    elif args.run:
        ck_path = tr.find_latest_checkpoint(args.run)
        if ck_path is None:
            raise ConfigError(f"no checkpoints under {args.run}")
    else:
        raise ConfigError("sample needs --checkpoint or --run")

    ck = ckpt.load(ck_path)
    cfg = cf.parse_config(ck.config_text)
    if args.steps is not None:
        cfg = cf.with_value(cfg, "sampling.budgets", args.steps)
    if args.tau is not None:
        cfg = cf.with_value(cfg, "sampling.tau", repr(args.tau))
    if args.cfg is not None:
        cfg = cf.with_value(cfg, "sampling.cfg_weight", repr(args.cfg))
    if args.previews:
        cfg = cf.with_value(cfg, "sampling.previews", "true")

    namespace = "ema" if args.weights == "ema" else "param"
    params = _checkpoint_params(ck, cfg.model, namespace)
    labels = _sample_labels(cfg.model, args.count, args.label)

    out = Path(args.out) if args.out else _out_root() / "samples"
    out.mkdir(parents=True, exist_ok=True)
    _generate_batches(params, cfg, args.count, args.seed, labels, out)

    guided = labels is not None and cfg.sampling.cfg_weight != 1.0
    evals = cfg.sampling.total_steps * (2 if guided else 1)
    log = [
        f"checkpoint = {ck_path}",
        f"step = {ck.step}",
        f"weights = {namespace}",
        f"seed = {args.seed}",
        f"count = {args.count}",
        f"budgets = {','.join(str(b) for b in cfg.sampling.budgets)}",
        f"tau = {cfg.sampling.tau!r}",
        f"cfg_weight = {cfg.sampling.cfg_weight!r}",
        f"model_evals = {evals}",
    ]
    (out / "sample_log.txt").write_text("\n".join(log) + "\n")
    print(f"wrote {args.count} samples to {out} ({evals} model evals)")


# ------------------------------------------------------------------ eval

def _load_run_dir(path, resolution, channels, name, seed):
    from . import data
    from . import evaluation as ev

    ds = data.load_directory(path, resolution, channels)
    labels = ds.labels if ds.num_classes > 0 else None
    return ev.RunSamples(name, ds.images, labels=labels, seed=seed)


def cmd_eval(args):
    from . import evaluation as ev
    from . import imageio as iio

    first = sorted(
        p for p in Path(args.reference).iterdir()
        if p.suffix in (".pgm", ".ppm")
    )
    if not first:
        raise RuntimeAbort(f"no images under {args.reference}")
    probe = iio.read_image(first[0])
    channels, resolution = probe.shape[0], probe.shape[1:]

    reference = _load_run_dir(args.reference, resolution, channels,
                              "reference", 0)
    runs_a = [_load_run_dir(d, resolution, channels, "run_a", i)
              for i, d in enumerate(args.run_a)]
    runs_b = [_load_run_dir(d, resolution, channels, "run_b", i)
              for i, d in enumerate(args.run_b)]

    fe = ev.FeatureExtractor(
        ev.FeatureExtractorSpec(seed=args.seed, channels=channels)
    )
    scales = _load_cfg(args).scales if args.config else None
    report = ev.compare_runs(runs_a, runs_b, reference, fe, scales=scales)

    out = Path(args.out) if args.out else _out_root() / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "verdict.txt").write_text(report.verdict + "\n")
    print(report.verdict)
    print(f"report written to {out / 'report.csv'}")


# ---------------------------------------------------------------- ablate

def _parse_sweeps(specs):
    sweeps = []
    for spec in specs:
        key, sep, raw = spec.partition("=")
        if not sep or not raw:
            raise ConfigError(f"sweep spec {spec!r} is not key=v1|v2|...")
        values = [v.strip() for v in raw.split("|")]
        sweeps.append((key.strip(), values))
    return sweeps


def cmd_ablate(args):
    from . import autodiff as ad
    from . import config as cf
    from . import evaluation as ev

    base = _load_cfg(args)
    if args.steps is not None:
        base = cf.with_value(base, "train.steps", str(args.steps))
    sweeps = _parse_sweeps(args.sweep)
    # validate the whole grid before any training starts
    grid = []
    for combo in itertools.product(*(vs for _, vs in sweeps)):
        point = base
        for (key, _), value in zip(sweeps, combo):
            point = cf.with_value(point, key, value)
        grid.append((combo, point))

    root = Path(args.out) if args.out else _out_root() / "ablate"
    root.mkdir(parents=True, exist_ok=True)
    fe = None
    rows = ["parameter,value,seed,fd"]
    names = ",".join(key for key, _ in sweeps)
    for combo, point in grid:
        slug = "_".join(f"{k.split('.')[-1]}={v}" for (k, _), v
                        in zip(sweeps, combo))
        for rep in range(args.seeds):
            seed = point.train.seed + rep
            run_cfg = cf.with_value(point, "train.seed", str(seed))
            run_dir = root / slug / f"seed{seed}"
            print(f"[{slug} seed {seed}] training {run_cfg.train.steps} steps")
            run_cfg, state = _train_run(run_cfg, run_dir, None, quiet=True)

            params = {k: ad.Tensor(v) for k, v in state.ema.items()}
            labels = _sample_labels(run_cfg.model, args.count, None)
            sample_dir = run_dir / "samples"
            sample_dir.mkdir(parents=True, exist_ok=True)
            images = _generate_batches(params, run_cfg, args.count, seed,
                                       labels, sample_dir)

            ds = _dataset(run_cfg)
            if fe is None:
                fe = ev.FeatureExtractor(ev.FeatureExtractorSpec(
                    seed=0, channels=run_cfg.scales.channels))
            fd = ev.frechet_distance(ev.summarize(images, fe),
                                     ev.summarize(ds.images, fe))
            value = ",".join(combo)
            rows.append(f"{names},\"{value}\",{seed},{fd!r}")
            print(f"[{slug} seed {seed}] fd {fd:.6g}")
    (root / "summary.csv").write_text("\n".join(rows) + "\n")
    print(f"summary written to {root / 'summary.csv'}")


# ------------------------------------------------------------------ main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfm",
        description="Coarse-to-fine flow-matching image models, CPU-only.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("decompose", help="split an image into pyramid levels")
    p.add_argument("input", help="PGM/PPM image at the configured resolution")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="train (resumes automatically)")
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, default=None, help="override train.steps")
    p.add_argument("--variant", default=None, choices=("dfm", "tied", "vanilla"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", default=None, help="explicit resume point")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw images from a checkpoint")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--run", default=None, help="run dir; uses its latest checkpoint")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--label", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", default=None, help="per-stage budgets, e.g. 30,10")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--cfg", type=float, default=None, help="guidance weight")
    p.add_argument("--previews", action="store_true")
    p.add_argument("--weights", default="ema", choices=("ema", "live"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="compare two run families to a reference")
    p.add_argument("--run-a", nargs="+", required=True)
    p.add_argument("--run-b", nargs="+", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="enables band energies")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/sample/score a sweep grid")
    p.add_argument("--config", default=None)
    p.add_argument("--sweep", action="append", required=True,
                   metavar="KEY=V1|V2", help="e.g. train.variant=dfm|tied")
    p.add_argument("--seeds", type=int, default=1, help="replicates per point")
    p.add_argument("--count", type=int, default=256, help="samples per run")
    p.add_argument("--steps", type=int, default=None, help="override train.steps")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 2
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RuntimeAbort as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
