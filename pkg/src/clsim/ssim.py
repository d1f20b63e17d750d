"""Global-statistics SSIM between two aligned grayscale images.

Moments are taken over the whole image (population normalisation, 1/n),
not over sliding windows. The windowed form with a uniform window is
available through ``window=`` for comparison only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import GrayImage


@dataclass(frozen=True)
class SsimParams:
    K1: float = 0.01
    K2: float = 0.03
    L: float = 255.0

    def __post_init__(self) -> None:
        if not (0 < self.K1 < 0.5 and 0 < self.K2 < 0.5):
            raise ValueError("K1 and K2 must lie in (0, 0.5)")
        if not self.L > 0:
            raise ValueError("dynamic range L must be positive")

    @property
    def C1(self) -> float:
        return (self.K1 * self.L) ** 2

    @property
    def C2(self) -> float:
        return (self.K2 * self.L) ** 2


@dataclass(frozen=True)
class ImageMoments:
    mu: float
    sigma: float
    n: int


def moments(img: GrayImage) -> ImageMoments:
    px = img.pixels
    n = px.size
    mu = px.sum() / n
    xc = px - mu
    var = (xc * xc).sum() / n
    return ImageMoments(float(mu), float(np.sqrt(var)), n)


def ssim_from_moments(mu_x, mu_y, var_x, var_y, cov_xy, c1: float, c2: float):
    """Combine luminance/contrast/structure terms. Works elementwise on arrays.

    The result is clipped to [-1, 1] to absorb last-ulp rounding.
    """
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return np.clip(num / den, -1.0, 1.0)


def _check_pair(x: GrayImage, y: GrayImage, p: SsimParams) -> None:
    if x.pixels.shape != y.pixels.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    if x.dynamic_range != y.dynamic_range:
        raise ValueError(f"dynamic range mismatch: {x.dynamic_range} vs {y.dynamic_range}")
    if x.dynamic_range != p.L:
        raise ValueError(f"image dynamic range {x.dynamic_range} does not match L={p.L}")


def ssim(x: GrayImage, y: GrayImage, p: SsimParams | None = None, window: int | None = None) -> float:
    """SSIM of two equally sized images.

    With ``window=None`` (the default) a single set of whole-image moments
    is used. With an integer ``window`` the SSIM map over every valid
    ``window x window`` uniform patch is averaged instead.
    """
    p = p or SsimParams(L=x.dynamic_range)
    _check_pair(x, y, p)
    if window is not None:
        return _windowed_ssim(x.pixels, y.pixels, p, window)

    a, b = x.pixels, y.pixels
    n = a.size
    mu_x = a.sum() / n
    mu_y = b.sum() / n
    xc = a - mu_x
    yc = b - mu_y
    var_x = (xc * xc).sum() / n
    var_y = (yc * yc).sum() / n
    cov = (xc * yc).sum() / n
    return float(ssim_from_moments(mu_x, mu_y, var_x, var_y, cov, p.C1, p.C2))


def _windowed_ssim(a: np.ndarray, b: np.ndarray, p: SsimParams, window: int) -> float:
    if window < 1 or window > min(a.shape):
        raise ValueError(f"window {window} does not fit image of shape {a.shape}")
    view = np.lib.stride_tricks.sliding_window_view
    wa = view(a, (window, window))
    wb = view(b, (window, window))
    mu_x = wa.mean(axis=(-1, -2))
    mu_y = wb.mean(axis=(-1, -2))
    var_x = (wa * wa).mean(axis=(-1, -2)) - mu_x**2
    var_y = (wb * wb).mean(axis=(-1, -2)) - mu_y**2
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_x * mu_y
    return float(np.mean(ssim_from_moments(mu_x, mu_y, var_x, var_y, cov, p.C1, p.C2)))
