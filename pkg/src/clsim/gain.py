"""Exponential-decay model of augmentation gain versus class similarity.

The curve is ``f(x) = exp(alpha * x + beta)`` with ``f`` in percent. The
published three-number form ``b ** (p * x + q)`` maps onto it through
``alpha = p * ln b`` and ``beta = q * ln b``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAPER_BASE = 0.94
PAPER_SLOPE = 202.74
PAPER_OFFSET = -79.92
DEFAULT_THRESHOLD = 0.1652
MAX_ITER = 500

WORKS = "works"
DOES_NOT_WORK = "does-not-work"


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class GainCurve:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError("curve parameters must be finite")
        if self.alpha >= 0:
            warnings.warn(f"gain curve is not decaying (alpha={self.alpha:.4g} >= 0)", stacklevel=3)

    @classmethod
    def from_paper_form(cls, b: float, p: float, q: float) -> "GainCurve":
        if not b > 0:
            raise ValueError("base must be positive")
        lb = math.log(b)
        return cls(alpha=p * lb, beta=q * lb)

    def paper_form(self, b: float = PAPER_BASE) -> tuple[float, float, float]:
        lb = math.log(b)
        return (b, self.alpha / lb, self.beta / lb)

    def __call__(self, x):
        return np.exp(self.alpha * np.asarray(x, dtype=np.float64) + self.beta)


@dataclass(frozen=True)
class FitDiagnostics:
    r_squared: float
    mae: float
    n_points: int


@dataclass(frozen=True)
class GainPoint:
    x: float
    improvement: float
    label: str = ""

    def __post_init__(self) -> None:
        if not -1 <= self.x <= 1:
            raise ValueError(f"similarity value {self.x} outside [-1, 1]")
        if not math.isfinite(self.improvement):
            raise ValueError("improvement must be finite")


def relative_improvement(acc_orig: float, acc_aug: float) -> float:
    """Accuracy gain in percent of the original accuracy."""
    if not acc_orig > 0:
        raise ValueError("original accuracy must be positive")
    return 100.0 * (acc_aug - acc_orig) / acc_orig


def published_curve() -> GainCurve:
    return GainCurve.from_paper_form(PAPER_BASE, PAPER_SLOPE, PAPER_OFFSET)


def predict(c: GainCurve, x: float) -> float:
    if not math.isfinite(x):
        raise ValueError("x must be finite")
    return float(math.exp(c.alpha * x + c.beta))


def verdict(x: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    return WORKS if x <= threshold else DOES_NOT_WORK


def sse(c: GainCurve, points: Sequence[GainPoint]) -> float:
    x, y = _arrays(points)
    r = c(x) - y
    return float(r @ r)


def diagnostics(c: GainCurve, points: Sequence[GainPoint]) -> FitDiagnostics:
    """R^2 and MAE of ``c`` measured in percent space."""
    x, y = _arrays(points)
    r = c(x) - y
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(r @ r)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else -math.inf)
    return FitDiagnostics(r_squared=r2, mae=float(np.abs(r).mean()), n_points=len(points))


def _arrays(points: Sequence[GainPoint]) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([p.x for p in points], dtype=np.float64)
    y = np.array([p.improvement for p in points], dtype=np.float64)
    return x, y


def _fit_log_linear(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    A = np.column_stack([x, np.ones_like(x)])
    (alpha, beta), *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    return float(alpha), float(beta)


def _fit_nlls(x: np.ndarray, y: np.ndarray, theta0: tuple[float, float],
              max_iter: int = MAX_ITER, tol: float = 1e-15) -> tuple[float, float]:
    # Gauss-Newton with Levenberg damping, (J^T J + lam I) h = -J^T r, and
    # Nielsen's gain-ratio update of lam.
    theta = np.array(theta0, dtype=np.float64)

    def residual(t):
        with np.errstate(over="ignore"):
            return np.exp(t[0] * x + t[1]) - y

    def jacobian(r):
        f = r + y
        return np.column_stack([x * f, f])

    r = residual(theta)
    cost = 0.5 * float(r @ r)
    J = jacobian(r)
    H, g = J.T @ J, J.T @ r
    lam = 1e-3 * float(np.max(np.diag(H)))
    nu = 2.0
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= tol * max(cost, 1.0):
            return float(theta[0]), float(theta[1])
        h = np.linalg.solve(H + lam * np.eye(2), -g)
        if np.linalg.norm(h) <= 1e-12 * (np.linalg.norm(theta) + 1e-12):
            return float(theta[0]), float(theta[1])
        cand = theta + h
        r_new = residual(cand)
        cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
        predicted = 0.5 * float(h @ (lam * h - g))
        rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
        if rho > 0:
            theta, r, cost = cand, r_new, cost_new
            J = jacobian(r)
            H, g = J.T @ J, J.T @ r
            lam *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
            nu = 2.0
        else:
            lam *= nu
            nu *= 2.0
            if not math.isfinite(lam):
                return float(theta[0]), float(theta[1])
    raise FitError(f"nonlinear fit did not converge in {max_iter} damped iterations")


def fit(points: Sequence[GainPoint], method: str = "direct-nlls") -> tuple[GainCurve, FitDiagnostics]:
    """Fit ``exp(alpha * x + beta)`` to ``points``.

    ``log-linear`` regresses ``ln(improvement)`` on ``x`` and drops points
    with non-positive improvement. ``direct-nlls`` minimises squared error
    in percent space, starting from the log-linear solution. Diagnostics
    are always reported in percent space on all supplied points.
    """
    if method not in ("log-linear", "direct-nlls"):
        raise ValueError(f"unknown fit method {method!r}")
    if len(points) < 2:
        raise FitError("need at least 2 points to fit")
    x, y = _arrays(points)
    pos = y > 0
    if method == "log-linear" and not pos.all():
        log.warning("log-linear fit: dropping %d non-positive improvements", int((~pos).sum()))
    if pos.sum() >= 2 and np.unique(x[pos]).size >= 2:
        theta0 = _fit_log_linear(x[pos], y[pos])
    elif method == "log-linear":
        raise FitError("log-linear fit needs at least 2 points with positive improvement and distinct x")
    else:
        theta0 = (0.0, math.log(max(float(np.mean(np.abs(y))), 1e-6)))
    if method == "log-linear":
        theta = theta0
    else:
        theta = _fit_nlls(x, y, theta0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curve = GainCurve(*theta)
    if curve.alpha >= 0:
        warnings.warn(f"fitted gain curve is not decaying (alpha={curve.alpha:.4g})", stacklevel=2)
    return curve, diagnostics(curve, points)


def fit_report(curve: GainCurve, diag: FitDiagnostics | None = None,
               points: Sequence[GainPoint] = (), method: str | None = None) -> dict:
    b, p, q = curve.paper_form()
    out = {
        "alpha": curve.alpha,
        "beta": curve.beta,
        "paper_form": {"b": b, "p": p, "q": q},
        "r_squared": diag.r_squared if diag else None,
        "mae_percent": diag.mae if diag else None,
        "points": [asdict(pt) for pt in points],
    }
    if method:
        out["method"] = method
    return out


def save_curve(path: str | os.PathLike, curve: GainCurve, diag: FitDiagnostics | None = None,
               points: Sequence[GainPoint] = (), method: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(fit_report(curve, diag, points, method), indent=2) + "\n")
    return path


def load_curve(path: str | os.PathLike) -> GainCurve:
    data = json.loads(Path(path).read_text())
    if "alpha" in data and "beta" in data:
        return GainCurve(float(data["alpha"]), float(data["beta"]))
    pf = data["paper_form"]
    return GainCurve.from_paper_form(float(pf["b"]), float(pf["p"]), float(pf["q"]))


def read_points(path_or_lines: str | os.PathLike | Iterable[str]) -> list[GainPoint]:
    """Read ``label,x,improvement_percent`` rows."""
    if isinstance(path_or_lines, (str, os.PathLike)):
        with open(path_or_lines, newline="") as fh:
            return read_points(fh.read().splitlines())
    reader = csv.DictReader(path_or_lines)
    missing = {"label", "x", "improvement_percent"} - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"points CSV missing columns: {sorted(missing)}")
    return [GainPoint(float(r["x"]), float(r["improvement_percent"]), r["label"]) for r in reader]


def bundled_points(name: str = "table3_cgan") -> list[GainPoint]:
    """Bundled reference points: ``table3_cgan`` or ``table2_gd``."""
    text = resources.files("clsim").joinpath("data").joinpath(f"{name}.csv").read_text()
    return read_points(text.splitlines())


def bundled_points_path(name: str = "table3_cgan") -> Path:
    return Path(str(resources.files("clsim").joinpath("data").joinpath(f"{name}.csv")))
