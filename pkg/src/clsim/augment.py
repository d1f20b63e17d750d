"""Generative augmentation loop with classifier filtering.

Each step tops every under-represented sub-class up to a target count with
generated images that the current classifier assigns to their intended
class with probability at least ``alpha``, then retrains on the enlarged
set. The loop stops once validation accuracy improves by less than
``epsilon`` percentage points, or after ``max_steps`` steps.

Generators and classifiers are plugged in through small ports so that the
desk-scale reference implementations here can be swapped for real models.
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dataset import (
    ClassHierarchy,
    GrayImage,
    ImageCache,
    ImageRef,
    class_counts,
    load_image,
    resize,
    save_manifest,
    save_png,
)
from .setsim import derive_seed

log = logging.getLogger(__name__)

LabeledSet = Sequence[tuple[GrayImage, str]]


class PortError(RuntimeError):
    """A generator or classifier port misbehaved."""


class GeneratorPort(Protocol):
    def generate(self, sub_class_id: str, count: int, seed: int) -> list[GrayImage]: ...


class ClassifierPort(Protocol):
    def train(self, data: LabeledSet): ...

    def labels(self, state) -> Sequence[str]: ...

    def predict_proba(self, state, image: GrayImage) -> np.ndarray: ...

    def evaluate(self, state, data: LabeledSet) -> float: ...


@dataclass(frozen=True)
class AugmentationConfig:
    alpha: float = 0.9
    epsilon: float = 0.5
    max_steps: int = 2
    target_count: int | None = None
    attempt_multiplier: int = 10
    seed: int = 42

    def __post_init__(self) -> None:
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.attempt_multiplier < 1:
            raise ValueError("attempt_multiplier must be >= 1")
        if self.target_count is not None and self.target_count < 1:
            raise ValueError("target_count must be >= 1")


@dataclass(frozen=True)
class Acceptance:
    sub_class: str
    path: str
    probability: float


@dataclass
class StepRecord:
    accepted: dict[str, int]
    rejected: int
    val_accuracy_before: float = float("nan")
    val_accuracy_after: float = float("nan")
    attempts: dict[str, int] = field(default_factory=dict)
    shortfall: dict[str, int] = field(default_factory=dict)
    acceptances: list[Acceptance] = field(default_factory=list)

    def to_json(self, base: Path | None = None) -> dict:
        def rel(p: str) -> str:
            return Path(os.path.relpath(p, base)).as_posix() if base else p

        return {
            "accepted": dict(self.accepted),
            "rejected": self.rejected,
            "val_acc_before": self.val_accuracy_before,
            "val_acc_after": self.val_accuracy_after,
            "attempts": dict(self.attempts),
            "shortfall": dict(self.shortfall),
            "acceptances": [
                {"sub_class": a.sub_class, "path": rel(a.path), "probability": a.probability}
                for a in self.acceptances
            ],
        }


@dataclass
class AugmentationRun:
    config: AugmentationConfig
    steps: list[StepRecord]
    final_dataset: ClassHierarchy
    initial_accuracy: float


def labeled_images(h: ClassHierarchy, cache: ImageCache) -> list[tuple[GrayImage, str]]:
    return [(cache.get(ref), sub_id) for ref, sub_id in h.labeled_refs()]


def check_disjoint(train: ClassHierarchy, val: ClassHierarchy) -> None:
    shared = {r.path for r in train.images()} & {r.path for r in val.images()}
    if shared:
        raise ValueError(f"validation set shares {len(shared)} image(s) with training, e.g. {sorted(shared)[0]}")
    unknown = set(val.sub_class_ids()) - set(train.sub_class_ids())
    if unknown:
        raise ValueError(f"validation sub-classes not in training manifest: {sorted(unknown)}")


def filter_qualified(candidates: Sequence[tuple[GrayImage, str]], classifier: ClassifierPort, state,
                     alpha: float) -> tuple[list[tuple[GrayImage, str, float]], int]:
    """Keep candidates whose target-class probability is at least ``alpha``.

    Returns ``(accepted, rejected_count)``; accepted entries are
    ``(image, sub_class, probability)`` in candidate order.
    """
    labels = list(classifier.labels(state))
    index = {lab: k for k, lab in enumerate(labels)}
    accepted = []
    rejected = 0
    for image, target in candidates:
        if target not in index:
            raise KeyError(f"sub-class {target!r} unknown to classifier")
        proba = np.asarray(classifier.predict_proba(state, image), dtype=np.float64)
        if proba.shape != (len(labels),):
            raise PortError(f"predict_proba returned shape {proba.shape}, expected ({len(labels)},)")
        p = float(proba[index[target]])
        if p >= alpha:
            accepted.append((image, target, p))
        else:
            rejected += 1
    return accepted, rejected


def augmentation_step(h: ClassHierarchy, gen: GeneratorPort, classifier: ClassifierPort, state,
                      cfg: AugmentationConfig, cache: ImageCache, run_dir: str | os.PathLike,
                      step_index: int = 0, target_count: int | None = None) -> tuple[ClassHierarchy, StepRecord]:
    """Top up every sub-class below target with qualified synthetic images.

    Synthetic images are written under ``run_dir/synthetic`` and appended to
    the returned hierarchy with ``synthetic=True``.
    """
    counts = class_counts(h).per_sub_class
    target = target_count or cfg.target_count or max(counts.values())
    if any(n > target for n in counts.values()):
        raise ValueError(f"target_count {target} is below an existing sub-class count")
    run_dir = Path(run_dir).resolve()
    record = StepRecord(accepted={}, rejected=0)
    new_h = h
    for sub_id in h.sub_class_ids():
        deficit = target - counts[sub_id]
        record.accepted[sub_id] = 0
        if deficit <= 0:
            continue
        budget = cfg.attempt_multiplier * deficit
        drawn = 0
        batch = 0
        kept: list[tuple[GrayImage, float]] = []
        while len(kept) < deficit and drawn < budget:
            n = min(deficit - len(kept), budget - drawn)
            seed = derive_seed(cfg.seed, f"step{step_index}/{sub_id}/batch{batch}")
            try:
                images = gen.generate(sub_id, n, seed)
            except PortError:
                raise
            except Exception as exc:
                raise PortError(f"generator failed for {sub_id!r}: {exc}") from exc
            if len(images) != n:
                raise PortError(f"generator returned {len(images)} images for {sub_id!r}, expected {n}")
            drawn += n
            batch += 1
            acc, rej = filter_qualified([(img, sub_id) for img in images], classifier, state, cfg.alpha)
            record.rejected += rej
            kept.extend((img, p) for img, _, p in acc)
        refs = list(new_h.sub_class(sub_id).images)
        for k, (img, p) in enumerate(kept):
            path = run_dir / "synthetic" / f"step{step_index}" / sub_id / f"{k:05d}.png"
            save_png(img, path)
            cache.put(path, img)
            refs.append(ImageRef(path, synthetic=True, probability=p))
            record.acceptances.append(Acceptance(sub_id, str(path), p))
        new_h = new_h.replace_sub_class(sub_id, refs)
        record.accepted[sub_id] = len(kept)
        record.attempts[sub_id] = drawn
        record.shortfall[sub_id] = deficit - len(kept)
    return new_h, record


def run(h: ClassHierarchy, val: LabeledSet, gen: GeneratorPort, classifier: ClassifierPort,
        cfg: AugmentationConfig, run_dir: str | os.PathLike, cache: ImageCache | None = None) -> AugmentationRun:
    """Iterate train -> augment -> retrain -> evaluate until the stopping rule fires."""
    if len(val) == 0:
        raise ValueError("validation set is empty")
    cache = cache or ImageCache(h.common_size)
    target = cfg.target_count or class_counts(h).max_count

    state = classifier.train(labeled_images(h, cache))
    acc_before = float(classifier.evaluate(state, val))
    initial = acc_before
    steps: list[StepRecord] = []
    current = h
    for s in range(cfg.max_steps):
        current, record = augmentation_step(current, gen, classifier, state, cfg, cache, run_dir, s, target)
        state = classifier.train(labeled_images(current, cache))
        acc_after = float(classifier.evaluate(state, val))
        record.val_accuracy_before = acc_before
        record.val_accuracy_after = acc_after
        steps.append(record)
        log.info("step %d: accepted %s, rejected %d, val acc %.2f -> %.2f",
                 s, record.accepted, record.rejected, acc_before, acc_after)
        if acc_after - acc_before < cfg.epsilon:
            break
        acc_before = acc_after
    return AugmentationRun(cfg, steps, current, initial)


def write_run(result: AugmentationRun, run_dir: str | os.PathLike,
              manifest_name: str = "final_manifest.json") -> Path:
    """Write the final manifest and ``ledger.json`` into ``run_dir``."""
    run_dir = Path(run_dir).resolve()
    manifest_path = save_manifest(result.final_dataset, run_dir / manifest_name)
    ledger = {
        "config": asdict(result.config),
        "initial_val_acc": result.initial_accuracy,
        "steps": [rec.to_json(run_dir) for rec in result.steps],
        "final_manifest": manifest_path.name,
    }
    ledger_path = run_dir / "ledger.json"
    ledger_path.write_text(json.dumps(ledger, indent=2) + "\n")
    return ledger_path


# -- reference classifier ---------------------------------------------------

@dataclass(frozen=True)
class SoftmaxState:
    classes: tuple[str, ...]
    weights: np.ndarray
    bias: np.ndarray
    feature_size: tuple[int, int]


class SoftmaxClassifier:
    """Multinomial logistic regression on downsampled pixel intensities.

    Full-batch gradient descent from zero weights with a fixed schedule, so
    training is deterministic.
    """

    def __init__(self, feature_size: tuple[int, int] = (16, 16), epochs: int = 300,
                 learning_rate: float = 0.5, l2: float = 1e-3):
        self.feature_size = feature_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.l2 = l2

    def _features(self, images: Sequence[GrayImage]) -> np.ndarray:
        return np.stack([
            resize(img, self.feature_size).pixels.ravel() / img.dynamic_range - 0.5 for img in images
        ])

    def train(self, data: LabeledSet) -> SoftmaxState:
        if not data:
            raise ValueError("cannot train on an empty set")
        classes = tuple(sorted({lab for _, lab in data}))
        index = {c: k for k, c in enumerate(classes)}
        X = self._features([img for img, _ in data])
        y = np.array([index[lab] for _, lab in data])
        onehot = np.eye(len(classes))[y]
        n, d = X.shape
        W = np.zeros((d, len(classes)))
        b = np.zeros(len(classes))
        for _ in range(self.epochs):
            P = _softmax(X @ W + b)
            G = (P - onehot) / n
            W -= self.learning_rate * (X.T @ G + self.l2 * W)
            b -= self.learning_rate * G.sum(axis=0)
        return SoftmaxState(classes, W, b, self.feature_size)

    def labels(self, state: SoftmaxState) -> tuple[str, ...]:
        return state.classes

    def predict_proba(self, state: SoftmaxState, image: GrayImage) -> np.ndarray:
        x = self._features([image])
        return _softmax(x @ state.weights + state.bias)[0]

    def evaluate(self, state: SoftmaxState, data: LabeledSet) -> float:
        if not data:
            raise ValueError("cannot evaluate on an empty set")
        X = self._features([img for img, _ in data])
        pred = np.argmax(X @ state.weights + state.bias, axis=1)
        truth = [lab for _, lab in data]
        hits = sum(state.classes[k] == t for k, t in zip(pred, truth))
        return 100.0 * hits / len(data)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p


# -- reference generators ---------------------------------------------------

class NoiseGenerator:
    """Resample a real image of the class and add Gaussian pixel noise."""

    def __init__(self, h: ClassHierarchy, cache: ImageCache, noise_std: float = 8.0):
        self.h = h
        self.cache = cache
        self.noise_std = noise_std

    def generate(self, sub_class_id: str, count: int, seed: int) -> list[GrayImage]:
        refs = self.h.sub_class(sub_class_id).images
        rng = np.random.default_rng(seed)
        out = []
        for k in rng.integers(0, len(refs), size=count):
            base = self.cache.get(refs[k])
            noisy = base.pixels + rng.normal(0.0, self.noise_std, size=base.pixels.shape)
            out.append(GrayImage(np.floor(np.clip(noisy, 0, base.dynamic_range) + 0.5), base.dynamic_range))
        return out


class BlobGenerator:
    """Fully synthetic images: one Gaussian blob per class at a fixed position.

    Class ``k`` of ``K`` places its blob on a circle around the image centre
    at angle ``2 pi k / K``; each sample jitters the centre and adds noise.
    """

    def __init__(self, sub_class_ids: Sequence[str], size: tuple[int, int] = (32, 32),
                 amplitude: float = 150.0, background: float = 50.0, noise_std: float = 10.0,
                 jitter: float = 1.5):
        self.sub_class_ids = list(sub_class_ids)
        self.size = tuple(size)
        self.amplitude = amplitude
        self.background = background
        self.noise_std = noise_std
        self.jitter = jitter

    def prototype_center(self, sub_class_id: str) -> tuple[float, float]:
        k = self.sub_class_ids.index(sub_class_id)
        w, h = self.size
        angle = 2 * np.pi * k / len(self.sub_class_ids)
        radius = 0.3 * min(w, h)
        return ((w - 1) / 2 + radius * np.cos(angle), (h - 1) / 2 + radius * np.sin(angle))

    def generate(self, sub_class_id: str, count: int, seed: int) -> list[GrayImage]:
        if sub_class_id not in self.sub_class_ids:
            raise KeyError(sub_class_id)
        rng = np.random.default_rng(seed)
        w, h = self.size
        cx, cy = self.prototype_center(sub_class_id)
        sigma = 0.12 * min(w, h)
        yy, xx = np.mgrid[0:h, 0:w]
        out = []
        for _ in range(count):
            dx, dy = rng.normal(0.0, self.jitter, size=2)
            blob = np.exp(-((xx - cx - dx) ** 2 + (yy - cy - dy) ** 2) / (2 * sigma**2))
            px = self.background + self.amplitude * blob + rng.normal(0.0, self.noise_std, size=(h, w))
            out.append(GrayImage(np.floor(np.clip(px, 0, 255) + 0.5)))
        return out


class SubprocessGenerator:
    """Delegate generation to an external program over files.

    The program is called as ``<command...> request.json``. The request is
    ``{"sub_class", "count", "seed", "common_size": [w, h], "out_dir"}``;
    the program writes ``count`` PNG/JPEG files into ``out_dir`` plus
    ``out_dir/response.json`` = ``{"images": [relative paths]}``.
    """

    def __init__(self, command: str | Sequence[str], common_size: tuple[int, int],
                 timeout: float | None = 600.0):
        if isinstance(command, str):
            command = [sys.executable, command] if command.endswith(".py") else [command]
        self.command = list(command)
        self.common_size = tuple(common_size)
        self.timeout = timeout

    def generate(self, sub_class_id: str, count: int, seed: int) -> list[GrayImage]:
        with tempfile.TemporaryDirectory(prefix="clsim-gen-") as tmp:
            tmp = Path(tmp)
            out_dir = tmp / "out"
            out_dir.mkdir()
            request = {
                "sub_class": sub_class_id,
                "count": count,
                "seed": seed,
                "common_size": list(self.common_size),
                "out_dir": str(out_dir),
            }
            req_path = tmp / "request.json"
            req_path.write_text(json.dumps(request))
            proc = subprocess.run([*self.command, str(req_path)], capture_output=True, text=True,
                                  timeout=self.timeout)
            if proc.returncode != 0:
                raise PortError(f"generator process exited {proc.returncode}: {proc.stderr.strip()}")
            try:
                response = json.loads((out_dir / "response.json").read_text())
                paths = response["images"]
            except (OSError, ValueError, KeyError) as exc:
                raise PortError(f"generator process wrote no valid response.json: {exc}") from exc
            return [load_image(out_dir / p, self.common_size) for p in paths]
