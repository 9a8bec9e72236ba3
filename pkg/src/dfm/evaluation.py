"""Quantitative evaluation of sample sets.

Distances are Frechet distances between Gaussian fits of features from a
frozen, seed-determined random convolutional extractor.  Random features
trade discriminative power for exact reproducibility: no pretrained
backbone, no downloads, bit-identical across machines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import pyramid
from .errors import ConfigError

__all__ = [
    "FeatureExtractorSpec",
    "FeatureExtractor",
    "GaussianSummary",
    "summarize",
    "frechet_distance",
    "band_energy",
    "null_threshold",
    "RunSamples",
    "Report",
    "compare_runs",
]


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Description of the frozen random feature stack.

    Three strided conv layers with tanh, then global average pooling, so
    output_dim equals the last width.  Weights are a pure function of seed.
    """

    seed: int = 0
    channels: int = 1
    widths: tuple = (64, 128, 256)
    strides: tuple = (2, 2, 2)

    def __post_init__(self) -> None:
        if len(self.widths) != len(self.strides):
            raise ConfigError("widths and strides must have equal length")
        if any(w <= 0 for w in self.widths) or any(s <= 0 for s in self.strides):
            raise ConfigError("widths and strides must be positive")
        if self.channels <= 0:
            raise ConfigError("channels must be positive")

    @property
    def output_dim(self) -> int:
        return int(self.widths[-1])


class FeatureExtractor:
    """Frozen random conv stack; weights fixed at construction."""

    def __init__(self, spec: FeatureExtractorSpec):
        self.spec = spec
        self.weights = []
        cin = spec.channels
        for i, cout in enumerate(spec.widths):
            rng = np.random.default_rng((spec.seed, i))
            w = rng.standard_normal((cout, cin, 3, 3)).astype(np.float32)
            w /= math.sqrt(cin * 9)
            self.weights.append(w)
            cin = cout

    def _layer(self, x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
        b, c, h, wd = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        win = win[:, :, ::stride, ::stride]
        ho, wo = win.shape[2], win.shape[3]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
        cols = cols.reshape(b * ho * wo, c * 9)
        out = cols @ w.reshape(w.shape[0], -1).T
        return np.tanh(out.reshape(b, ho, wo, -1).transpose(0, 3, 1, 2))

    def extract(self, images: np.ndarray, chunk: int = 1024) -> np.ndarray:
        """Map (N, C, H, W) images to (N, output_dim) float32 features."""
        if images.ndim != 4 or images.shape[1] != self.spec.channels:
            raise ValueError(
                f"expected (N, {self.spec.channels}, H, W) images, "
                f"got {images.shape}"
            )
        feats = np.empty((images.shape[0], self.spec.output_dim), np.float32)
        for lo in range(0, images.shape[0], chunk):
            x = images[lo:lo + chunk].astype(np.float32, copy=False)
            for w, s in zip(self.weights, self.spec.strides):
                x = self._layer(x, w, s)
            feats[lo:lo + x.shape[0]] = x.mean(axis=(2, 3))
        return feats


@dataclass(frozen=True)
class GaussianSummary:
    """First two moments of a feature set."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size,) * 2:
            raise ValueError("mean must be (D,), cov must be (D, D)")
        if np.abs(self.cov - self.cov.T).max() > 1e-8:
            raise ValueError("cov must be symmetric")


def summarize(samples: np.ndarray, fe: FeatureExtractor) -> GaussianSummary:
    """Empirical mean and unbiased covariance of extracted features."""
    if samples.shape[0] < 2:
        raise ValueError("need at least 2 samples to estimate a covariance")
    feats = fe.extract(samples).astype(np.float64)
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False, ddof=1)
    return GaussianSummary(mean=mean, cov=np.atleast_2d(cov))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    # negative eigenvalues are roundoff from near-singular fits; clamp at 0
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clamped at 0."""
    if a.mean.shape != b.mean.shape:
        raise ValueError(
            f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}"
        )
    diff = a.mean - b.mean
    ra = _psd_sqrt(a.cov)
    cross = _psd_sqrt(ra @ b.cov @ ra)
    val = float(diff @ diff + np.trace(a.cov + b.cov) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def band_energy(levels: Sequence[np.ndarray]) -> np.ndarray:
    """Mean squared value per pyramid level."""
    return np.array([float(np.mean(np.square(lv))) for lv in levels])


def null_threshold(
    samples: np.ndarray,
    fe: FeatureExtractor,
    *,
    splits: int = 20,
    quantile: float = 0.95,
    margin: float = 1.25,
    seed: int = 0,
) -> float:
    """Calibrate a same-distribution acceptance threshold by permutation.

    Features are extracted once; each split shuffles the pool and measures
    the distance between disjoint halves.  The returned threshold is the
    requested quantile of those null distances times a safety margin.
    """
    if samples.shape[0] < 4:
        raise ValueError("need at least 4 samples to calibrate")
    feats = fe.extract(samples).astype(np.float64)
    half = feats.shape[0] // 2
    rng = np.random.default_rng(seed)
    dists = []
    for _ in range(splits):
        order = rng.permutation(feats.shape[0])
        xs, ys = feats[order[:half]], feats[order[half:2 * half]]
        sa = GaussianSummary(xs.mean(0), np.atleast_2d(np.cov(xs, rowvar=False)))
        sb = GaussianSummary(ys.mean(0), np.atleast_2d(np.cov(ys, rowvar=False)))
        dists.append(frechet_distance(sa, sb))
    return float(margin * np.quantile(dists, quantile))


@dataclass(frozen=True)
class RunSamples:
    """One seed-replicate worth of generated images."""

    name: str
    images: np.ndarray
    labels: Optional[np.ndarray] = None
    seed: int = 0


@dataclass
class Report:
    """Flat metric table plus a win/loss verdict."""

    rows: list = field(default_factory=list)  # (metric, run, seed, value)
    medians: dict = field(default_factory=dict)
    verdict: str = ""

    def to_csv(self) -> str:
        lines = ["metric,run,seed,value"]
        for metric, run, seed, value in self.rows:
            lines.append(f"{metric},{run},{seed},{value!r}")
        return "\n".join(lines) + "\n"


def _per_class_rows(run: RunSamples, ref: RunSamples, fe: FeatureExtractor,
                    rows: list) -> None:
    if run.labels is None or ref.labels is None:
        return
    for cls in np.unique(ref.labels):
        ra = run.images[run.labels == cls]
        rb = ref.images[ref.labels == cls]
        if ra.shape[0] < 2 or rb.shape[0] < 2:
            continue
        d = frechet_distance(summarize(ra, fe), summarize(rb, fe))
        rows.append((f"class{int(cls)}_fd", run.name, run.seed, d))


def compare_runs(
    runs_a: Sequence[RunSamples],
    runs_b: Sequence[RunSamples],
    reference: RunSamples,
    fe: FeatureExtractor,
    scales=None,
) -> Report:
    """Score two run families against a shared reference set.

    Each replicate contributes a pseudo-Frechet distance to the reference;
    the family with the lower median wins.  Per-class distances and band
    energies are reported when labels / a scale ladder are available.
    """
    if not runs_a or not runs_b:
        raise ValueError("both run families must be non-empty")
    ref_summary = summarize(reference.images, fe)
    report = Report()
    fds = {}
    for family in (runs_a, runs_b):
        for run in family:
            d = frechet_distance(summarize(run.images, fe), ref_summary)
            report.rows.append(("fd", run.name, run.seed, d))
            fds.setdefault(run.name, []).append(d)
            _per_class_rows(run, reference, fe, report.rows)
            if scales is not None:
                levels = pyramid.decompose(run.images, scales)
                for s, e in enumerate(band_energy(levels)):
                    report.rows.append(
                        (f"band{s + 1}_energy", run.name, run.seed, float(e))
                    )
    name_a, name_b = runs_a[0].name, runs_b[0].name
    med_a = float(np.median(fds[name_a]))
    med_b = float(np.median(fds[name_b]))
    report.medians = {name_a: med_a, name_b: med_b}
    if med_a < med_b:
        report.verdict = f"{name_a} wins: median fd {med_a:.6g} < {med_b:.6g}"
    elif med_b < med_a:
        report.verdict = f"{name_b} wins: median fd {med_b:.6g} < {med_a:.6g}"
    else:
        report.verdict = f"tie: median fd {med_a:.6g}"
    return report
