#!/usr/bin/env python3
"""Refit the gain curve on the bundled cGAN and guided-diffusion points.

Prints the fitted parameters next to the published curve and writes the
fit reports plus a scatter CSV into --out-dir.
"""

import argparse
from pathlib import Path

from clsim import gain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path, default=Path("results/gain_fit"))
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    pub = gain.published_curve()
    print(f"{'points':<12} {'method':<12} {'alpha':>9} {'beta':>7} {'R^2':>7} {'MAE%':>7} {'SSE':>9}")
    for name in ("table3_cgan", "table2_gd"):
        points = gain.bundled_points(name)
        d_pub = gain.diagnostics(pub, points)
        print(f"{name:<12} {'published':<12} {pub.alpha:9.3f} {pub.beta:7.3f} "
              f"{d_pub.r_squared:7.4f} {d_pub.mae:7.3f} {gain.sse(pub, points):9.2f}")
        for method in ("log-linear", "direct-nlls"):
            c, d = gain.fit(points, method)
            print(f"{'':<12} {method:<12} {c.alpha:9.3f} {c.beta:7.3f} "
                  f"{d.r_squared:7.4f} {d.mae:7.3f} {gain.sse(c, points):9.2f}")
            gain.save_curve(args.out_dir / f"{name}_{method}.json", c, d, points, method)
        b, p, q = gain.fit(points)[0].paper_form()
        print(f"{'':<12} as {b}^({p:.2f}x{q:+.2f})")


if __name__ == "__main__":
    main()
