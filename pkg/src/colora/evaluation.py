"""Sampling a generator and scoring it against a dataset spec."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from colora import autodiff as ad
from colora import metrics
from colora.adapters import AdapterSet
from colora.datasets import DatasetSpec, load
from colora.networks import Weights, generate, sample_latents

FID_SAMPLES = 500
DIVERSITY_SAMPLES = 100
SOURCE_SAMPLES = 50
_CHUNK = 100


@dataclass(frozen=True)
class EvalResult:
    proxy_fid: float
    diversity: float


def sample_images(gen: Weights, adapters: AdapterSet | None, n: int, seed: int) -> np.ndarray:
    """``n`` images from fixed latents and noise derived from ``seed``."""
    z = sample_latents(gen.arch, n, seed)
    out = []
    with ad.no_tape():
        for i, start in enumerate(range(0, n, _CHUNK)):
            out.append(generate(z[start:start + _CHUNK], gen, adapters, noise_seed=seed * 1000 + i).data)
    return np.concatenate(out)


@functools.lru_cache(maxsize=32)
def reference_stats(spec: DatasetSpec, n: int = FID_SAMPLES) -> metrics.GaussStats:
    """Statistics of ``n`` held-out samples from the distribution behind ``spec``."""
    return metrics.fit_stats(load(spec.reference(n), np.float64))


def evaluate(gen: Weights, adapters: AdapterSet | None, target: DatasetSpec, eval_seed: int,
             n_fid: int = FID_SAMPLES, n_div: int = DIVERSITY_SAMPLES) -> EvalResult:
    samples = sample_images(gen, adapters, max(n_fid, n_div), eval_seed)
    fid = metrics.frechet_distance(metrics.fit_stats(samples[:n_fid]), reference_stats(target, n_fid))
    return EvalResult(fid, metrics.pairwise_diversity(samples[:n_div]))


def measure_l_st(source: DatasetSpec, shots: np.ndarray, n_source: int = SOURCE_SAMPLES) -> float:
    """Source-to-target distance from source data samples and the task shots."""
    src = load(DatasetSpec(source.kind, n_source, source.seed, source.resolution), np.float64)
    return metrics.source_target_distance(src, shots)
