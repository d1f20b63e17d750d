"""Synthetic toy datasets written to disk as PNG files plus a manifest."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .augment import BlobGenerator
from .dataset import ClassHierarchy, GrayImage, ImageRef, SubClass, SuperClass, save_manifest, save_png
from .setsim import derive_seed


def write_dataset(root: str | Path, images: Mapping[str, Mapping[str, Sequence[GrayImage]]],
                  name: str = "synthetic", common_size: tuple[int, int] | None = None,
                  manifest_name: str = "manifest.json") -> Path:
    """Write ``{super: {sub: [images]}}`` under ``root`` and return the manifest path."""
    root = Path(root).resolve()
    sups = []
    for sup_id, subs in images.items():
        sub_objs = []
        for sub_id, imgs in subs.items():
            refs = tuple(ImageRef(save_png(img, root / sup_id / sub_id / f"{k:04d}.png"))
                         for k, img in enumerate(imgs))
            sub_objs.append(SubClass(sub_id, refs))
        sups.append(SuperClass(sup_id, tuple(sub_objs)))
    return save_manifest(ClassHierarchy(name, tuple(sups), common_size), root / manifest_name)


def blob_dataset(root: str | Path, counts: Mapping[str, int], super_class: str = "S",
                 size: tuple[int, int] = (32, 32), seed: int = 0, name: str = "blobs",
                 tag: str = "train") -> Path:
    """One super-class of blob sub-classes with the given image counts."""
    gen = BlobGenerator(list(counts), size)
    imgs = {sub: gen.generate(sub, n, derive_seed(seed, f"{tag}/{sub}")) for sub, n in counts.items()}
    return write_dataset(root, {super_class: imgs}, name=name, common_size=size)


def near_duplicate_images(n: int, size: tuple[int, int], rng: np.random.Generator,
                          noise_std: float = 2.0) -> list[GrayImage]:
    """``n`` small perturbations of one random smooth base image."""
    w, h = size
    coarse = rng.uniform(30, 225, size=(max(2, h // 4), max(2, w // 4)))
    base = np.kron(coarse, np.ones((4, 4)))[:h, :w]
    base = np.pad(base, ((0, h - base.shape[0]), (0, w - base.shape[1])), mode="edge")
    return [GrayImage(np.floor(np.clip(base + rng.normal(0, noise_std, base.shape), 0, 255) + 0.5))
            for _ in range(n)]


def noise_images(n: int, size: tuple[int, int], rng: np.random.Generator) -> list[GrayImage]:
    w, h = size
    return [GrayImage(rng.integers(0, 256, size=(h, w)).astype(np.float64)) for _ in range(n)]
