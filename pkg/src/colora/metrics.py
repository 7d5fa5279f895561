"""Perceptual proxies, Fréchet distance and the alpha-selection heuristic.

No pretrained perceptual network is available at this scale, so a small
random conv net with seed-pinned weights stands in for both LPIPS and the
Inception features behind FID:

* three 3x3 convs (3->16->16->32), each followed by leaky ReLU and 2x average
  pooling, weights Normal(0, 2/fan_in) drawn once from ``EMBEDDER_SEED``;
* image feature vector: channel means of the three stages, concatenated (64-d);
* patch features: per-position channel vectors of each stage, unit-normalised.

All metric arithmetic runs in float64.
"""
from __future__ import annotations

import csv
import functools
from importlib import resources
from dataclasses import dataclass

import numpy as np

from colora import kernels
from colora.errors import NumericalError, ShapeError

EMBEDDER_SEED = 20240917
EMBEDDER_CHANNELS = (16, 16, 32)
FEATURE_DIM = sum(EMBEDDER_CHANNELS)
_NORM_EPS = 1e-10
_CHUNK = 100


@functools.lru_cache(maxsize=None)
def embedder_weights(in_channels: int = 3) -> tuple[np.ndarray, ...]:
    """The fixed conv kernels, stored as float32 values and used as float64."""
    rng = np.random.default_rng(EMBEDDER_SEED)
    weights, c = [], in_channels
    for o in EMBEDDER_CHANNELS:
        fan_in = c * 9
        w = (rng.standard_normal((o, c, 3, 3)) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        w.setflags(write=False)
        weights.append(w)
        c = o
    return tuple(weights)


def _conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = kernels.im2col(xp, 3, h, wd)
    out = w.reshape(w.shape[0], -1).astype(np.float64) @ cols
    return np.ascontiguousarray(out.reshape(w.shape[0], n, h, wd).transpose(1, 0, 2, 3))


def _stages(images: np.ndarray) -> list[np.ndarray]:
    x = np.ascontiguousarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"expected [n, c, h, w] images, got {images.shape}")
    maps = []
    for w in embedder_weights(x.shape[1]):
        x = _conv3x3(x, w)
        x = np.where(x >= 0, x, 0.2 * x)
        x = kernels.avgpool2x(x)
        maps.append(x)
    return maps


def embed(images: np.ndarray) -> np.ndarray:
    """Per-image 64-d feature vectors ``[n, 64]``."""
    out = []
    for start in range(0, len(images), _CHUNK):
        maps = _stages(images[start:start + _CHUNK])
        out.append(np.concatenate([m.mean(axis=(2, 3)) for m in maps], axis=1))
    return np.concatenate(out, axis=0)


def patch_features(images: np.ndarray) -> list[np.ndarray]:
    """Unit-normalised per-position features, one ``[n, positions, channels]`` array per stage."""
    per_stage: list[list[np.ndarray]] = [[] for _ in EMBEDDER_CHANNELS]
    for start in range(0, len(images), _CHUNK):
        for j, m in enumerate(_stages(images[start:start + _CHUNK])):
            f = m.reshape(m.shape[0], m.shape[1], -1).transpose(0, 2, 1)
            norm = np.sqrt(np.sum(f * f, axis=2, keepdims=True))
            per_stage[j].append(f / (norm + _NORM_EPS))
    return [np.concatenate(chunks, axis=0) for chunks in per_stage]


def _distance_matrix(fa: list[np.ndarray], fb: list[np.ndarray]) -> np.ndarray:
    """Mean over stages and positions of squared distances, for every (a, b) pair."""
    total = None
    for a, b in zip(fa, fb):
        p = a.shape[1]
        sa = np.sum(a * a, axis=(1, 2)) / p
        sb = np.sum(b * b, axis=(1, 2)) / p
        cross = a.reshape(a.shape[0], -1) @ b.reshape(b.shape[0], -1).T / p
        d = np.maximum(sa[:, None] + sb[None, :] - 2.0 * cross, 0.0)
        total = d if total is None else total + d
    return total / len(fa)


def perceptual_distance(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Patch-feature distance between two ``[c, h, w]`` images in [-1, 1]."""
    img_a, img_b = np.asarray(img_a), np.asarray(img_b)
    if img_a.shape != img_b.shape:
        raise ShapeError(f"perceptual_distance: shapes differ {img_a.shape} vs {img_b.shape}")
    fa = patch_features(img_a[None])
    fb = patch_features(img_b[None])
    total = 0.0
    for a, b in zip(fa, fb):
        diff = a[0] - b[0]
        total += float(np.mean(np.sum(diff * diff, axis=1)))
    return total / len(fa)


def source_target_distance(source: np.ndarray, target: np.ndarray) -> float:
    """Mean perceptual distance over all (source, target) pairs."""
    if len(source) < 1 or len(target) < 1:
        raise ValueError("source_target_distance needs non-empty sample sets")
    return float(np.mean(_distance_matrix(patch_features(source), patch_features(target))))


def pairwise_diversity(samples: np.ndarray) -> float:
    """Mean perceptual distance over all unordered pairs of distinct samples."""
    n = len(samples)
    if n < 2:
        raise ValueError("pairwise_diversity needs at least 2 samples")
    d = _distance_matrix(*(2 * [patch_features(samples)]))
    iu = np.triu_indices(n, k=1)
    return float(np.mean(d[iu]))


# ---------------------------------------------------------------- Fréchet distance


@dataclass
class GaussStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


def fit_stats_features(features: np.ndarray) -> GaussStats:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError("fit_stats needs at least 2 samples")
    # shifting by the first sample keeps identical rows exactly zero
    shifted = feats - feats[0]
    offset = shifted.mean(axis=0)
    mu = feats[0] + offset
    centred = shifted - offset
    cov = centred.T @ centred / (feats.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussStats(mu, cov, feats.shape[0])


def fit_stats(samples: np.ndarray) -> GaussStats:
    """Mean and unbiased covariance of embedded images."""
    if len(samples) < 2:
        raise ValueError("fit_stats needs at least 2 samples")
    return fit_stats_features(embed(samples))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(s1: GaussStats, s2: GaussStats) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), clamped at 0."""
    if s1.mean.shape != s2.mean.shape or s1.cov.shape != s2.cov.shape:
        raise ShapeError(f"frechet_distance: dimension mismatch {s1.mean.shape} vs {s2.mean.shape}")
    try:
        root1 = _psd_sqrt(s1.cov)
        inner = root1 @ s2.cov @ root1
        vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    diff = s1.mean - s2.mean
    tr_cross = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    value = float(diff @ diff + np.trace(s1.cov) + np.trace(s2.cov) - 2.0 * tr_cross)
    return max(value, 0.0)


# ---------------------------------------------------------------- alpha selection


@dataclass(frozen=True)
class AlphaChoice:
    l_st: float
    multiplier: float
    alpha_fc: float
    alpha_conv: float


def select_alphas(l_st: float, m: float, conv_divisor: float | None = None) -> AlphaChoice:
    """``alpha_fc = m * L``, ``alpha_conv = L / m`` (or ``L / conv_divisor``)."""
    if not l_st > 0 or not m > 0:
        raise ValueError(f"L_st and multiplier must be positive, got {l_st}, {m}")
    div = m if conv_divisor is None else conv_divisor
    if not div > 0:
        raise ValueError(f"conv divisor must be positive, got {div}")
    return AlphaChoice(l_st, m, m * l_st, l_st / div)


FAR_TARGET_THRESHOLD = 0.40


def default_multiplier(l_st: float) -> float:
    """4 for targets far from the source (L >= 0.40), else 1."""
    if not l_st > 0:
        raise ValueError(f"L_st must be positive, got {l_st}")
    return 4.0 if l_st >= FAR_TARGET_THRESHOLD else 1.0


def reference_table(name: str) -> list[dict]:
    """Pinned reference ablation rows (``multiplier_sweep`` or ``split_sweep``), numeric fields as floats."""
    text = resources.files("colora").joinpath("data", f"{name}.csv").read_text(encoding="utf-8")
    rows = []
    for row in csv.DictReader(text.splitlines()):
        rows.append({k: (v if k == "dataset" else float(v)) for k, v in row.items()})
    return rows
