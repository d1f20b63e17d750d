"""Bootstrap estimates of the mean pairwise SSIM of an image set.

``ssim_merge_cls`` applies the estimator to every training image at once;
``ssim_sup_sub_cls`` applies it to each super-class separately and keeps the
largest value. Pairs are drawn up front, scored in fixed-size chunks into a
pre-indexed buffer and summed in index order, so results do not depend on
the number of worker threads.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import DEFAULT_COMMON_SIZE, ClassHierarchy, GrayImage, ImageCache, ImageRef
from .ssim import SsimParams, ssim, ssim_from_moments

log = logging.getLogger(__name__)

CHUNK = 4096


@dataclass(frozen=True)
class BootstrapConfig:
    repetition_multiplier: float = 2.0
    seed: int = 42
    common_size: tuple[int, int] = DEFAULT_COMMON_SIZE
    ssim_params: SsimParams = field(default_factory=SsimParams)
    window: int | None = None

    def __post_init__(self) -> None:
        if not self.repetition_multiplier > 0:
            raise ValueError("repetition_multiplier must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def repetitions(self, set_size: int) -> int:
        return max(1, math.ceil(self.repetition_multiplier * set_size))


@dataclass(frozen=True)
class SetSimilarityEstimate:
    mean: float
    n_pairs: int
    std_dev: float
    seed: int


@dataclass(frozen=True)
class SupSubResult:
    per_super_class: dict[str, SetSimilarityEstimate]
    max_value: float
    argmax_super_class: str


def default_workers() -> int:
    env = os.environ.get("CLSIM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def derive_seed(seed: int, key: str) -> int:
    """Stable 64-bit child seed for ``key`` (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    words = np.frombuffer(digest, dtype="<u4").tolist()
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *words])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_pairs(set_size: int, repetitions: int, seed: int) -> np.ndarray:
    """Draw ``repetitions`` ordered index pairs (i, j), i != j, uniformly.

    Returns an int64 array of shape (repetitions, 2).
    """
    if set_size < 2:
        raise ValueError(f"need at least 2 items to form a pair, got {set_size}")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, set_size, size=repetitions)
    j = rng.integers(0, set_size - 1, size=repetitions)
    j = j + (j >= i)
    return np.stack([i, j], axis=1)


def _pair_scores(mu: np.ndarray, centered: np.ndarray, pairs: np.ndarray, p: SsimParams) -> np.ndarray:
    n_px = centered.shape[1]
    a = centered[pairs[:, 0]]
    b = centered[pairs[:, 1]]
    var_a = (a * a).sum(axis=1) / n_px
    var_b = (b * b).sum(axis=1) / n_px
    cov = (a * b).sum(axis=1) / n_px
    return ssim_from_moments(mu[pairs[:, 0]], mu[pairs[:, 1]], var_a, var_b, cov, p.C1, p.C2)


def pair_ssims(images: Sequence[GrayImage], pairs: np.ndarray, params: SsimParams,
               window: int | None = None, workers: int | None = None) -> np.ndarray:
    """SSIM for every row of ``pairs``, in row order."""
    shape = images[0].pixels.shape
    for img in images:
        if img.pixels.shape != shape:
            raise ValueError("all images must share one size; resample to a common size first")
    out = np.empty(len(pairs), dtype=np.float64)
    if window is None:
        stack = np.stack([img.pixels.ravel() for img in images])
        mu = stack.sum(axis=1) / stack.shape[1]
        centered = stack - mu[:, None]

    def score(start: int) -> None:
        chunk = pairs[start:start + CHUNK]
        if window is None:
            out[start:start + len(chunk)] = _pair_scores(mu, centered, chunk, params)
        else:
            for k, (i, j) in enumerate(chunk):
                out[start + k] = ssim(images[i], images[j], params, window=window)

    starts = range(0, len(pairs), CHUNK)
    workers = workers or default_workers()
    if workers == 1 or len(starts) == 1:
        for s in starts:
            score(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(score, starts))
    return out


def ssim_set(images: Sequence[GrayImage], cfg: BootstrapConfig, repetitions: int | None = None,
             seed: int | None = None, workers: int | None = None) -> SetSimilarityEstimate:
    """Mean SSIM over randomly drawn distinct pairs of ``images``.

    ``repetitions`` defaults to ``cfg.repetitions(len(images))``.
    """
    if len(images) < 2:
        raise ValueError(f"need at least 2 images, got {len(images)}")
    seed = cfg.seed if seed is None else seed
    reps = cfg.repetitions(len(images)) if repetitions is None else repetitions
    pairs = sample_pairs(len(images), reps, seed)
    scores = pair_ssims(images, pairs, cfg.ssim_params, cfg.window, workers)
    mean = float(scores.sum() / len(scores))
    std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return SetSimilarityEstimate(mean=mean, n_pairs=len(scores), std_dev=std, seed=seed)


def _load_all(refs: Sequence[ImageRef], cfg: BootstrapConfig, cache: ImageCache | None) -> list[GrayImage]:
    if cache is None or tuple(cache.common_size or ()) != tuple(cfg.common_size):
        cache = ImageCache(cfg.common_size)
    return [cache.get(r) for r in refs]


def ssim_merge_cls(h: ClassHierarchy, cfg: BootstrapConfig, cache: ImageCache | None = None,
                   workers: int | None = None) -> SetSimilarityEstimate:
    images = _load_all(h.images(), cfg, cache)
    return ssim_set(images, cfg, workers=workers)


def ssim_sup_sub_cls(h: ClassHierarchy, cfg: BootstrapConfig, cache: ImageCache | None = None,
                     workers: int | None = None) -> SupSubResult:
    """Per-super-class estimates and their maximum (ties: smallest id)."""
    for sup in h.super_classes:
        if len(sup.images()) < 2:
            raise ValueError(f"super-class {sup.id!r} has fewer than 2 images")
    if cache is None or tuple(cache.common_size or ()) != tuple(cfg.common_size):
        cache = ImageCache(cfg.common_size)
    per: dict[str, SetSimilarityEstimate] = {}
    for sup in h.super_classes:
        images = _load_all(sup.images(), cfg, cache)
        per[sup.id] = ssim_set(images, cfg, seed=derive_seed(cfg.seed, sup.id), workers=workers)
    best = max(est.mean for est in per.values())
    argmax = min(k for k, est in per.items() if est.mean == best)
    return SupSubResult(per_super_class=per, max_value=best, argmax_super_class=argmax)


def analysis_report(h: ClassHierarchy, merge: SetSimilarityEstimate, supsub: SupSubResult,
                    cfg: BootstrapConfig) -> dict:
    warnings = []
    if len(h.super_classes) > 1 and supsub.max_value < merge.mean:
        msg = (f"SSIM-supSubCls {supsub.max_value:.4f} is below SSIM-mergeCls "
               f"{merge.mean:.4f}; check the super-class grouping")
        log.warning(msg)
        warnings.append(msg)
    return {
        "dataset": h.name,
        "ssim_merge_cls": merge.mean,
        "ssim_sup_sub_cls": supsub.max_value,
        "argmax_super_class": supsub.argmax_super_class,
        "per_super_class": {
            k: {"mean": est.mean, "std_dev": est.std_dev, "n_pairs": est.n_pairs}
            for k, est in supsub.per_super_class.items()
        },
        "seed": cfg.seed,
        "repetition_multiplier": cfg.repetition_multiplier,
        "warnings": warnings,
    }


def analyze(h: ClassHierarchy, cfg: BootstrapConfig, workers: int | None = None) -> dict:
    cache = ImageCache(cfg.common_size)
    merge = ssim_merge_cls(h, cfg, cache, workers)
    supsub = ssim_sup_sub_cls(h, cfg, cache, workers)
    return analysis_report(h, merge, supsub, cfg)
