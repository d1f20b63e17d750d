"""Class-similarity metrics for deciding when generative augmentation helps."""

from .dataset import (
    ClassCounts,
    ClassHierarchy,
    GrayImage,
    ImageCache,
    ImageRef,
    ManifestError,
    SubClass,
    SuperClass,
    class_counts,
    load_image,
    load_manifest,
    manifest_from_tree,
    save_manifest,
)
from .gain import (
    FitDiagnostics,
    GainCurve,
    GainPoint,
    fit,
    predict,
    published_curve,
    relative_improvement,
    verdict,
)
from .setsim import (
    BootstrapConfig,
    SetSimilarityEstimate,
    SupSubResult,
    sample_pairs,
    ssim_merge_cls,
    ssim_set,
    ssim_sup_sub_cls,
)
from .ssim import ImageMoments, SsimParams, moments, ssim

__version__ = "0.1.0"
