"""Compression, baselines, and the SSIM/PSNR evaluation table."""

import numpy as np
import pytest

from elastisplat.errors import InvalidAttributeError, InvalidRatioError
from elastisplat.field import TransformField, transform_model
from elastisplat.importance import compute_gi
from elastisplat.infer import (
    SSIM_K1,
    SSIM_K2,
    CompactModel,
    compress,
    compress_gi_topk,
    compress_random,
    eval_ratios,
    eval_views,
    ssim,
)
from elastisplat.infer import _gaussian_window
from elastisplat.io import generate_synthetic
from elastisplat.render import psnr, render_image
from elastisplat.selector import SelectorNet
from elastisplat.train import MetricsLog, TrainConfig, TrainedBundle
from elastisplat.validation import floor_count

from .conftest import random_model, ring_camera
from .oracles import oracle_ssim


def make_bundle(seed: int = 11, n: int = 40, randomize_heads: bool = False):
    rng = np.random.default_rng(seed)
    model = random_model(rng, n)
    selector = SelectorNet.initialize(np.random.default_rng(seed + 1), model, width=8)
    fld = TransformField.initialize(
        np.random.default_rng(seed + 2), model,
        base_resolution=(4, 4, 4, 3), feature_dim=2, hidden=8,
    )
    if randomize_heads:
        head_rng = np.random.default_rng(seed + 3)
        for head in fld.heads.values():
            head.w2[...] = head_rng.uniform(-0.05, 0.05, head.w2.shape)
            head.b2[...] = head_rng.uniform(-0.02, 0.02, head.b2.shape)
    gi_table = compute_gi(model, [ring_camera(0.3, size=8)])
    return TrainedBundle(
        model=model, selector=selector, field=fld, gi_table=gi_table,
        config=TrainConfig(), metrics=MetricsLog(),
    )


# -- compress -------------------------------------------------------------------


def test_compress_counts_are_exact():
    ratios = [i / 100 for i in range(1, 101)]
    for n in (1, 7, 103):
        bundle = make_bundle(n=n)
        for e in ratios:
            compact = compress(bundle, e)
            assert compact.n == floor_count(e, n)
            assert compact.n == len(compact.indices)


def test_compress_keep_sets_nest_across_ratios():
    bundle = make_bundle(n=60, randomize_heads=True)
    previous = None
    for e in (0.05, 0.10, 0.32, 0.57, 0.80, 1.0):
        indices = set(compress(bundle, e).indices.tolist())
        if previous is not None:
            assert previous <= indices
        previous = indices


def test_compress_is_deterministic():
    bundle = make_bundle(n=50, randomize_heads=True)
    a = compress(bundle, 0.37)
    b = compress(bundle, 0.37)
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.model.positions, b.model.positions)
    np.testing.assert_array_equal(a.model.rotations, b.model.rotations)
    np.testing.assert_array_equal(a.model.sh, b.model.sh)


def test_compress_full_ratio_bypasses_the_field():
    # Training supervises the full model untouched, so e=1 must too, even
    # when the field has learned non-zero displacements.
    for randomize in (False, True):
        bundle = make_bundle(n=30, randomize_heads=randomize)
        compact = compress(bundle, 1.0)
        assert compact.n == 30
        np.testing.assert_array_equal(compact.model.positions, bundle.model.positions)
        np.testing.assert_array_equal(compact.model.log_scales, bundle.model.log_scales)
        np.testing.assert_array_equal(compact.model.rotations, bundle.model.rotations)
        np.testing.assert_array_equal(compact.model.opacities, bundle.model.opacities)
        np.testing.assert_array_equal(compact.model.sh, bundle.model.sh)


def test_compress_transforms_survivors_below_full_ratio():
    bundle = make_bundle(n=30, randomize_heads=True)
    compact = compress(bundle, 0.5)
    base = bundle.model.subset(compact.indices)
    assert (compact.model.positions != base.positions).any()
    # Composition contract: survivors are cut first, then displaced at e.
    moved, _ = transform_model(bundle.field, base, 0.5)
    np.testing.assert_array_equal(compact.model.positions, moved.positions)
    np.testing.assert_array_equal(compact.model.rotations, moved.rotations)
    # Opacity and color ride along unchanged.
    np.testing.assert_array_equal(compact.model.opacities, base.opacities)
    np.testing.assert_array_equal(compact.model.sh, base.sh)


def test_compress_rejects_out_of_range_ratios():
    bundle = make_bundle(n=10)
    for bad in (0.0, -0.2, 1.5, float("nan")):
        with pytest.raises(InvalidRatioError):
            compress(bundle, bad)


# -- baselines ------------------------------------------------------------------


def test_random_baseline_is_seeded_and_untransformed():
    bundle = make_bundle(n=50, randomize_heads=True)
    a = compress_random(bundle, 0.3, seed=4)
    b = compress_random(bundle, 0.3, seed=4)
    c = compress_random(bundle, 0.3, seed=5)
    assert a.n == floor_count(0.3, 50) and a.policy == "uniform-random"
    np.testing.assert_array_equal(a.indices, b.indices)
    assert (a.indices != c.indices).any()
    np.testing.assert_array_equal(
        a.model.positions, bundle.model.positions[a.indices])


def test_gi_baseline_keeps_top_importance_untransformed():
    bundle = make_bundle(n=50, randomize_heads=True)
    compact = compress_gi_topk(bundle, 0.2)
    expected = np.sort(bundle.gi_table.ranking[: floor_count(0.2, 50)])
    np.testing.assert_array_equal(compact.indices, expected)
    assert compact.policy == "gi-topk"
    np.testing.assert_array_equal(
        compact.model.positions, bundle.model.positions[expected])


# -- ssim -----------------------------------------------------------------------


def test_ssim_is_one_for_identical_images(rng):
    img = rng.uniform(size=(14, 17, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_sliding_window_oracle(rng):
    a = rng.uniform(size=(16, 20, 3))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0.0, 1.0)
    window = _gaussian_window()
    ref = oracle_ssim(a, b, window, SSIM_K1**2, SSIM_K2**2)
    assert ssim(a, b) == pytest.approx(ref, rel=1e-12)
    # Grayscale input takes the single-channel path.
    ref_gray = oracle_ssim(a[..., 0], b[..., 0], window, SSIM_K1**2, SSIM_K2**2)
    assert ssim(a[..., 0], b[..., 0]) == pytest.approx(ref_gray, rel=1e-12)


def test_ssim_orders_degradation_and_is_symmetric(rng):
    a = rng.uniform(size=(20, 20, 3))
    mild = np.clip(a + rng.normal(scale=0.02, size=a.shape), 0, 1)
    harsh = np.clip(a + rng.normal(scale=0.3, size=a.shape), 0, 1)
    assert ssim(a, mild) > ssim(a, harsh)
    assert ssim(a, harsh) == pytest.approx(ssim(harsh, a), rel=1e-12)


def test_ssim_rejects_bad_inputs(rng):
    img = rng.uniform(size=(16, 16, 3))
    with pytest.raises(InvalidAttributeError):
        ssim(img, rng.uniform(size=(16, 15, 3)))
    with pytest.raises(InvalidAttributeError):
        ssim(img[:8], img[:8])


# -- evaluation -----------------------------------------------------------------


def test_eval_ratios_rows_match_offline_recomputation():
    scene = generate_synthetic(seed=6, n_points=40, n_views=4, image_size=16,
                               holdout_every=2)
    bundle = make_bundle(n=40)
    bundle.model = scene.true_model
    bundle.selector = SelectorNet.initialize(
        np.random.default_rng(1), scene.true_model, width=8)
    bundle.field = TransformField.initialize(
        np.random.default_rng(2), scene.true_model,
        base_resolution=(4, 4, 4, 3), feature_dim=2, hidden=8)

    ratios = (0.25, 0.5, 1.0)
    rows = eval_ratios(bundle, scene.dataset, ratios)
    assert [row["ratio"] for row in rows] == list(ratios)

    options = bundle.config.render_options()
    views = scene.dataset.test_indices()
    for row in rows:
        compact = compress(bundle, row["ratio"])
        psnrs, ssims = [], []
        for idx in views:
            image = render_image(compact.model, scene.dataset.cameras[idx],
                                 options=options)
            psnrs.append(psnr(image, scene.dataset.images[idx]))
            ssims.append(ssim(image, scene.dataset.images[idx]))
        assert row["psnr"] == pytest.approx(np.mean(psnrs), rel=1e-12)
        assert row["ssim"] == pytest.approx(np.mean(ssims), rel=1e-12)

    # Fresh field at e=1: the compact render is the full model render.
    full = render_image(scene.true_model, scene.dataset.cameras[views[0]],
                        options=options)
    compact = compress(bundle, 1.0)
    np.testing.assert_array_equal(
        render_image(compact.model, scene.dataset.cameras[views[0]],
                     options=options), full)


def test_eval_views_fall_back_to_all_without_split():
    with_split = generate_synthetic(seed=3, n_points=10, n_views=4,
                                    image_size=12, holdout_every=2)
    assert eval_views(with_split.dataset) == list(with_split.dataset.test_indices())
    no_split = generate_synthetic(seed=3, n_points=10, n_views=3,
                                  image_size=12, holdout_every=0)
    assert eval_views(no_split.dataset) == [0, 1, 2]
