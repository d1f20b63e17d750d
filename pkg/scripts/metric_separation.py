#!/usr/bin/env python3
"""Class-similarity metrics on datasets of controlled similarity.

Sweeps the perturbation strength of near-duplicate super-classes from tiny
to large and prints SSIM-mergeCls / SSIM-supSubCls for each, together with
the gain predicted by the published curve.
"""

import argparse
from pathlib import Path

import numpy as np

from clsim import gain
from clsim.dataset import load_manifest
from clsim.setsim import BootstrapConfig, analyze
from clsim.synth import near_duplicate_images, noise_images, write_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path, default=Path("results/metric_separation"))
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    size = (args.size, args.size)
    cfg = BootstrapConfig(common_size=size, seed=args.seed)
    curve = gain.published_curve()

    print(f"{'perturbation':>12} {'mergeCls':>9} {'supSubCls':>9} {'pred gain %':>11} verdict")
    for std in (2, 10, 30, 60, 100, None):
        rng = np.random.default_rng(args.seed)
        if std is None:
            groups = {f"N{s}": {f"n{s}_{k}": noise_images(8, size, rng) for k in range(3)} for s in range(3)}
            label = "noise"
        else:
            groups = {f"S{s}": {f"s{s}_{k}": near_duplicate_images(8, size, np.random.default_rng(s), std)
                                for k in range(3)} for s in range(3)}
            label = f"std {std}"
        path = write_dataset(args.out_dir / label.replace(" ", "_"), groups, name=label)
        rep = analyze(load_manifest(path), cfg)
        x = rep["ssim_sup_sub_cls"]
        print(f"{label:>12} {rep['ssim_merge_cls']:9.4f} {x:9.4f} {gain.predict(curve, x):11.2f} {gain.verdict(x)}")


if __name__ == "__main__":
    main()
