import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clsim.dataset import ClassHierarchy, GrayImage, ImageRef, SubClass, SuperClass, load_manifest
from clsim.setsim import (
    BootstrapConfig,
    analyze,
    derive_seed,
    sample_pairs,
    ssim_merge_cls,
    ssim_set,
    ssim_sup_sub_cls,
)
from clsim.ssim import ssim
from clsim.synth import noise_images, write_dataset
from conftest import exhaustive_mean, gradient_images, oracle_ssim

SIZE = (8, 8)


def cfg(**kw):
    kw.setdefault("common_size", SIZE)
    return BootstrapConfig(**kw)


def test_sample_pairs_two_items():
    pairs = sample_pairs(2, 4, seed=3)
    assert pairs.shape == (4, 2)
    assert {tuple(p) for p in pairs} <= {(0, 1), (1, 0)}


def test_sample_pairs_deterministic():
    assert np.array_equal(sample_pairs(17, 500, 9), sample_pairs(17, 500, 9))
    assert not np.array_equal(sample_pairs(17, 500, 9), sample_pairs(17, 500, 10))


def test_sample_pairs_errors():
    with pytest.raises(ValueError):
        sample_pairs(1, 3, 0)
    with pytest.raises(ValueError):
        sample_pairs(3, 0, 0)


def test_sample_pairs_uniform():
    n, reps = 10, 100_000
    pairs = sample_pairs(n, reps, seed=12345)
    assert np.all(pairs[:, 0] != pairs[:, 1])
    counts = np.zeros((n, n))
    np.add.at(counts, (pairs[:, 0], pairs[:, 1]), 1)
    cells = counts[~np.eye(n, dtype=bool)]
    p = 1 / (n * (n - 1))
    expected = reps * p
    sd = math.sqrt(reps * p * (1 - p))
    # every ordered pair within 4 sd; total chi-square within 3 sd of its mean
    assert np.all(np.abs(cells - expected) < 4 * sd)
    chi2 = float(((cells - expected) ** 2 / expected).sum())
    df = cells.size - 1
    assert abs(chi2 - df) < 3 * math.sqrt(2 * df)


def test_repetitions_rule():
    assert BootstrapConfig().repetitions(10) == 20
    assert BootstrapConfig(repetition_multiplier=0.01).repetitions(10) == 1
    assert BootstrapConfig(repetition_multiplier=1.5).repetitions(3) == 5
    with pytest.raises(ValueError):
        BootstrapConfig(repetition_multiplier=0)


def test_identical_images_exactly_one():
    im = gradient_images(1)[0]
    est = ssim_set([im] * 5, cfg())
    assert est.mean == 1.0 and est.std_dev == 0.0 and est.n_pairs == 10


def test_two_images_is_their_ssim():
    a, b = gradient_images(3)[:2]
    est = ssim_set([a, b], cfg(repetition_multiplier=7))
    assert est.mean == pytest.approx(ssim(a, b), abs=1e-12)
    assert est.std_dev == pytest.approx(0.0, abs=1e-12)


def test_gradient_set_matches_exhaustive():
    images = gradient_images(6)
    exact = exhaustive_mean(images)
    est = ssim_set(images, cfg(), repetitions=10_000, seed=5)
    assert abs(est.mean - exact) < 0.01


def test_too_few_images():
    with pytest.raises(ValueError):
        ssim_set(gradient_images(1), cfg())


def test_mismatched_sizes():
    a = GrayImage(np.zeros((4, 4)))
    b = GrayImage(np.zeros((5, 5)))
    with pytest.raises(ValueError):
        ssim_set([a, b], cfg())


def test_worker_count_does_not_change_result():
    images = gradient_images(10)
    results = {w: ssim_set(images, cfg(), repetitions=20_000, seed=1, workers=w) for w in (1, 3, 8)}
    assert len({(r.mean, r.std_dev) for r in results.values()}) == 1


def test_windowed_set():
    images = gradient_images(4, size=(12, 12))
    est = ssim_set(images, BootstrapConfig(common_size=(12, 12), window=11), repetitions=50, seed=2)
    assert -1 <= est.mean <= 1


def test_derive_seed_stable():
    assert derive_seed(42, "A") == derive_seed(42, "A")
    assert derive_seed(42, "A") != derive_seed(42, "B")
    assert derive_seed(42, "A") != derive_seed(43, "A")
    assert 0 <= derive_seed(2**64 - 1, "x") < 2**64


@pytest.fixture
def two_group_manifest(tmp_path):
    base_a, base_b = noise_images(2, SIZE, np.random.default_rng(0))
    images = {"G": {"a": [base_a] * 3, "b": [base_b] * 3}}
    return load_manifest(write_dataset(tmp_path, images, common_size=SIZE)), base_a, base_b


def test_merge_identical_pair(tmp_path):
    im = gradient_images(1)[0]
    h = load_manifest(write_dataset(tmp_path, {"S": {"s": [im, im]}}))
    assert ssim_merge_cls(h, cfg()).mean == 1.0


def test_merge_within_vs_across(two_group_manifest):
    h, a, b = two_group_manifest
    cross = oracle_ssim(a.pixels, b.pixels)
    # ordered pairs among 6 images: 12 within (ssim 1), 18 across
    exact = (12 * 1.0 + 18 * cross) / 30
    est = ssim_merge_cls(h, cfg(repetition_multiplier=20_000))
    assert cross < est.mean < 1.0
    assert abs(est.mean - exact) < 0.01


def test_single_super_class_equals_merge_with_derived_seed(two_group_manifest):
    h, _, _ = two_group_manifest
    c = cfg(seed=11)
    sup = ssim_sup_sub_cls(h, c)
    merged = ssim_merge_cls(h, cfg(seed=derive_seed(11, "G")))
    assert sup.max_value == merged.mean
    assert sup.argmax_super_class == "G"


def test_sup_sub_max_and_ties(tmp_path):
    im = gradient_images(1)[0]
    noise = noise_images(4, SIZE, np.random.default_rng(1))
    images = {"Z": {"z": [im, im]}, "N": {"n": noise}, "A": {"a": [im, im, im]}}
    h = load_manifest(write_dataset(tmp_path, images, common_size=SIZE))
    res = ssim_sup_sub_cls(h, cfg())
    assert res.max_value == 1.0
    assert res.argmax_super_class == "A"  # tie between A and Z
    assert all(res.max_value >= e.mean for e in res.per_super_class.values())
    assert res.per_super_class["N"].n_pairs == 8


def test_sup_sub_needs_two_images(tmp_path):
    im = gradient_images(1)[0]
    h = load_manifest(write_dataset(tmp_path, {"A": {"a": [im, im]}, "B": {"b": [im]}}, common_size=SIZE))
    with pytest.raises(ValueError, match="'B'"):
        ssim_sup_sub_cls(h, cfg())


def test_analysis_report_fields(two_group_manifest):
    h, _, _ = two_group_manifest
    rep = analyze(h, cfg(), workers=2)
    assert set(rep) >= {"dataset", "ssim_merge_cls", "ssim_sup_sub_cls", "argmax_super_class",
                        "per_super_class", "seed", "repetition_multiplier"}
    assert rep["per_super_class"]["G"]["n_pairs"] == 12
    assert rep == analyze(h, cfg(), workers=1)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(2, 5), min_size=1, max_size=4), st.integers(0, 2**32))
def test_estimate_invariants(sizes, seed):
    rng = np.random.default_rng(seed)
    ests = [ssim_set(noise_images(n, (4, 4), rng), BootstrapConfig(common_size=(4, 4), seed=seed))
            for n in sizes]
    for est, n in zip(ests, sizes):
        assert -1 <= est.mean <= 1
        assert est.n_pairs == 2 * n
        assert est.std_dev >= 0
