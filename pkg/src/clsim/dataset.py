"""Dataset manifests, class hierarchies and grayscale image decoding.

A manifest is a JSON file grouping sub-classes (the original dataset
classes) under human-made super-classes::

    {"name": "toy", "common_size": [128, 128],
     "super_classes": [{"id": "A", "sub_classes": [
         {"id": "a1", "images": ["A/a1/0.png", ...]}]}]}

Image entries are either a relative path or an object
``{"path": ..., "synthetic": true, "probability": 0.93}`` for images
appended by the augmentation loop. Paths resolve against the manifest's
directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

DEFAULT_COMMON_SIZE = (128, 128)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# ITU-R BT.601 luma
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ManifestError(ValueError):
    """Raised for malformed manifests or hierarchy invariant violations."""


class ImageLoadError(ValueError):
    """Raised when an image cannot be decoded into a GrayImage."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """2-D intensity matrix on ``[0, dynamic_range]``, stored as float64."""

    pixels: np.ndarray
    dynamic_range: float = 255.0

    def __post_init__(self) -> None:
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D matrix, got shape {px.shape}")
        if not self.dynamic_range > 0:
            raise ValueError("dynamic_range must be positive")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > self.dynamic_range:
            raise ValueError(f"pixel values must lie in [0, {self.dynamic_range}]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        """(width, height), PIL order."""
        return (self.width, self.height)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (
            self.dynamic_range == other.dynamic_range
            and self.pixels.shape == other.pixels.shape
            and bool(np.array_equal(self.pixels, other.pixels))
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ImageRef:
    path: Path
    synthetic: bool = False
    probability: float | None = None


@dataclass(frozen=True)
class SubClass:
    id: str
    images: tuple[ImageRef, ...]


@dataclass(frozen=True)
class SuperClass:
    id: str
    sub_classes: tuple[SubClass, ...]

    def images(self) -> list[ImageRef]:
        return [ref for sub in self.sub_classes for ref in sub.images]


@dataclass(frozen=True)
class ClassHierarchy:
    """Immutable super-class -> sub-class -> image mapping.

    Image paths are stored absolute; they are made relative again only
    when the hierarchy is written back out with :func:`save_manifest`.
    """

    name: str
    super_classes: tuple[SuperClass, ...]
    common_size: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        validate_hierarchy(self)

    def sub_classes(self) -> list[SubClass]:
        return [sub for sup in self.super_classes for sub in sup.sub_classes]

    def sub_class_ids(self) -> list[str]:
        return [sub.id for sub in self.sub_classes()]

    def sub_class(self, sub_id: str) -> SubClass:
        for sub in self.sub_classes():
            if sub.id == sub_id:
                return sub
        raise KeyError(sub_id)

    def images(self) -> list[ImageRef]:
        return [ref for sup in self.super_classes for ref in sup.images()]

    def labeled_refs(self) -> Iterator[tuple[ImageRef, str]]:
        for sub in self.sub_classes():
            for ref in sub.images:
                yield ref, sub.id

    def replace_sub_class(self, sub_id: str, images: Sequence[ImageRef]) -> "ClassHierarchy":
        sups = []
        for sup in self.super_classes:
            subs = tuple(
                SubClass(s.id, tuple(images)) if s.id == sub_id else s for s in sup.sub_classes
            )
            sups.append(SuperClass(sup.id, subs))
        return ClassHierarchy(self.name, tuple(sups), self.common_size)


def validate_hierarchy(h: ClassHierarchy) -> None:
    seen_super: set[str] = set()
    seen_sub: set[str] = set()
    for sup in h.super_classes:
        if sup.id in seen_super or sup.id in seen_sub:
            raise ManifestError(f"duplicate class id {sup.id!r}")
        seen_super.add(sup.id)
        if not sup.sub_classes:
            raise ManifestError(f"super-class {sup.id!r} has no sub-classes")
        for sub in sup.sub_classes:
            if sub.id in seen_sub or sub.id in seen_super:
                raise ManifestError(f"duplicate class id {sub.id!r} (under super-class {sup.id!r})")
            seen_sub.add(sub.id)
            if not sub.images:
                raise ManifestError(f"sub-class {sub.id!r} has no images")
    if not h.super_classes:
        raise ManifestError("manifest has no super-classes")


@dataclass(frozen=True)
class ClassCounts:
    per_sub_class: dict[str, int] = field(default_factory=dict)

    @property
    def max_count(self) -> int:
        return max(self.per_sub_class.values())

    @property
    def min_count(self) -> int:
        return min(self.per_sub_class.values())

    @property
    def total(self) -> int:
        return sum(self.per_sub_class.values())


def class_counts(h: ClassHierarchy) -> ClassCounts:
    return ClassCounts({sub.id: len(sub.images) for sub in h.sub_classes()})


def _parse_size(value) -> tuple[int, int] | None:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ManifestError(f"common_size must be [w, h] or null, got {value!r}")
    w, hgt = (int(v) for v in value)
    if w < 1 or hgt < 1:
        raise ManifestError(f"common_size must be positive, got {value!r}")
    return (w, hgt)


def _parse_ref(entry, base: Path, where: str) -> ImageRef:
    if isinstance(entry, str):
        return ImageRef(Path(os.path.normpath(base / entry)))
    if isinstance(entry, dict) and isinstance(entry.get("path"), str):
        prob = entry.get("probability")
        return ImageRef(
            Path(os.path.normpath(base / entry["path"])),
            synthetic=bool(entry.get("synthetic", False)),
            probability=None if prob is None else float(prob),
        )
    raise ManifestError(f"bad image entry in {where}: {entry!r}")


def hierarchy_from_dict(data: dict, base: Path) -> ClassHierarchy:
    if not isinstance(data, dict) or not isinstance(data.get("super_classes"), list):
        raise ManifestError("manifest must be an object with a 'super_classes' list")
    sups = []
    for sup in data["super_classes"]:
        try:
            sup_id = str(sup["id"])
            subs = []
            for sub in sup["sub_classes"]:
                sub_id = str(sub["id"])
                refs = tuple(_parse_ref(e, base, f"sub-class {sub_id!r}") for e in sub["images"])
                subs.append(SubClass(sub_id, refs))
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed class entry {sup!r}: {exc}") from exc
        sups.append(SuperClass(sup_id, tuple(subs)))
    return ClassHierarchy(
        name=str(data.get("name", base.name)),
        super_classes=tuple(sups),
        common_size=_parse_size(data.get("common_size")),
    )


def load_manifest(path: str | os.PathLike) -> ClassHierarchy:
    """Parse a manifest file. Image files are not opened."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    return hierarchy_from_dict(data, path.resolve().parent)


def hierarchy_to_dict(h: ClassHierarchy, base: Path) -> dict:
    base = Path(os.path.abspath(base))

    def entry(ref: ImageRef):
        rel = Path(os.path.relpath(ref.path, base)).as_posix()
        if not ref.synthetic and ref.probability is None:
            return rel
        out: dict = {"path": rel, "synthetic": ref.synthetic}
        if ref.probability is not None:
            out["probability"] = ref.probability
        return out

    return {
        "name": h.name,
        "common_size": list(h.common_size) if h.common_size else None,
        "super_classes": [
            {
                "id": sup.id,
                "sub_classes": [
                    {"id": sub.id, "images": [entry(r) for r in sub.images]}
                    for sub in sup.sub_classes
                ],
            }
            for sup in h.super_classes
        ],
    }


def save_manifest(h: ClassHierarchy, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = hierarchy_to_dict(h, path.resolve().parent)
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


def manifest_from_tree(root: str | os.PathLike, name: str | None = None,
                       common_size: tuple[int, int] | None = None) -> ClassHierarchy:
    """Build a hierarchy from a ``root/<super>/<sub>/*.{png,jpg}`` layout."""
    root = Path(root).resolve()
    sups = []
    for sup_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        subs = []
        for sub_dir in sorted(p for p in sup_dir.iterdir() if p.is_dir()):
            files = sorted(
                f for f in sub_dir.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES
            )
            subs.append(SubClass(sub_dir.name, tuple(ImageRef(f) for f in files)))
        sups.append(SuperClass(sup_dir.name, tuple(subs)))
    return ClassHierarchy(name or root.name, tuple(sups), common_size)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma, rounded half-up to integers."""
    r, g, b = (rgb[..., k].astype(np.float64) for k in range(3))
    wr, wg, wb = LUMA_WEIGHTS
    return np.floor(wr * r + wg * g + wb * b + 0.5)


def resize(img: GrayImage, size: tuple[int, int]) -> GrayImage:
    """Bilinear resample to ``size`` = (width, height)."""
    if img.size == tuple(size):
        return img
    src = Image.fromarray(img.pixels.astype(np.float32), mode="F")
    out = np.asarray(src.resize(tuple(size), Image.BILINEAR), dtype=np.float64)
    return GrayImage(np.clip(out, 0.0, img.dynamic_range), img.dynamic_range)


def load_image(locator: str | os.PathLike | ImageRef,
               target_size: tuple[int, int] | None = None) -> GrayImage:
    path = locator.path if isinstance(locator, ImageRef) else Path(locator)
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise ImageLoadError(f"{path}: zero-dimension image")
            if im.format not in ("PNG", "JPEG"):
                raise ImageLoadError(f"{path}: unsupported format {im.format}")
            if im.mode == "L":
                px = np.asarray(im, dtype=np.float64)
            elif im.mode in ("1", "LA", "P", "RGB", "RGBA", "CMYK", "YCbCr"):
                if im.mode == "LA":
                    px = np.asarray(im.getchannel("L"), dtype=np.float64)
                else:
                    px = to_gray(np.asarray(im.convert("RGB")))
            else:
                raise ImageLoadError(f"{path}: unsupported pixel mode {im.mode} (8-bit only)")
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageLoadError(f"{path}: cannot decode image: {exc}") from exc
    img = GrayImage(px, 255.0)
    if target_size is not None:
        img = resize(img, target_size)
    return img


def save_png(img: GrayImage, path: str | os.PathLike) -> Path:
    """Write an 8-bit PNG; values are rounded and clipped to [0, 255]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scaled = img.pixels * (255.0 / img.dynamic_range)
    Image.fromarray(np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8), mode="L").save(path)
    return path


class ImageCache:
    """Decode+resize cache keyed by (path, common_size)."""

    def __init__(self, common_size: tuple[int, int] | None = DEFAULT_COMMON_SIZE):
        self.common_size = common_size
        self._store: dict[tuple[Path, tuple[int, int] | None], GrayImage] = {}

    def get(self, ref: ImageRef | str | os.PathLike) -> GrayImage:
        path = ref.path if isinstance(ref, ImageRef) else Path(ref)
        key = (path, self.common_size)
        img = self._store.get(key)
        if img is None:
            img = load_image(path, self.common_size)
            self._store[key] = img
        return img

    def put(self, path: str | os.PathLike, img: GrayImage) -> None:
        if self.common_size is not None and img.size != tuple(self.common_size):
            img = resize(img, self.common_size)
        self._store[(Path(path), self.common_size)] = img

    def __len__(self) -> int:
        return len(self._store)
