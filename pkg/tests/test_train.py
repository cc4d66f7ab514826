"""Optimizer, losses, densification, and joint-step gradient verification."""

import json
import math

import numpy as np
import pytest

from elastisplat.core import GaussianModel
from elastisplat.errors import StaleImportanceError
from elastisplat.field import TransformField
from elastisplat.importance import ImportanceTable, compute_gi, guidance_mask
from elastisplat.io import generate_synthetic
from elastisplat.render import RenderOptions, render_image
from elastisplat.selector import SelectorNet, TemperatureSchedule, gumbel_noise
from elastisplat.train import (
    STREAM_RATIO,
    STREAM_VIEW,
    Adam,
    MetricsLog,
    Stage2State,
    TrainConfig,
    densify_and_prune,
    elastic_step_gradients,
    ensure_fresh_importance,
    l1_loss_grad,
    load_bundle,
    position_lr,
    save_bundle,
    scene_extent,
    stage1_fit,
    stage2_step,
    stream_rng,
    train,
)

from .conftest import random_model, ring_camera
from .oracles import finite_difference


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        seed=3,
        stage1_iterations=20,
        stage2_iterations=15,
        densify_start=8,
        densify_stop=16,
        densify_interval=8,
        gi_refresh_interval=5,
        field_resolution=(6, 6, 6, 4),
        field_feature_dim=2,
        field_hidden=8,
        selector_width=8,
        log_every=5,
    )
    base.update(overrides)
    return TrainConfig(**base)


# -- optimizer -----------------------------------------------------------------


def test_adam_matches_reference_implementation(rng):
    param = rng.normal(size=(6, 3))
    ref = param.copy()
    adam = Adam(beta1=0.9, beta2=0.999, eps=1e-15)
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    for t in range(1, 6):
        grad = rng.normal(size=(6, 3))
        adam.step("p", param, grad, lr=0.01)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad * grad
        ref -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-15)
        np.testing.assert_allclose(param, ref, rtol=0, atol=1e-14)


def test_adam_remap_keeps_survivor_moments(rng):
    param = rng.normal(size=(4, 2))
    adam = Adam()
    adam.step("p", param, rng.normal(size=(4, 2)), lr=0.1)
    m_before = adam.state["p"][0].copy()
    adam.remap_rows("p", np.array([0, 2, 3]), n_new=2)
    m, v, t = adam.state["p"]
    assert m.shape == (5, 2) and v.shape == (5, 2) and t == 1
    np.testing.assert_array_equal(m[:3], m_before[[0, 2, 3]])
    assert not m[3:].any() and not v[3:].any()


def test_position_lr_interpolates_log_linearly():
    config = TrainConfig(
        stage1_iterations=100, stage2_iterations=100,
        position_lr_init=1e-3, position_lr_final=1e-5,
    )
    assert position_lr(config, 0, 2.0) == pytest.approx(2e-3)
    assert position_lr(config, 200, 2.0) == pytest.approx(2e-5)
    assert position_lr(config, 500, 2.0) == pytest.approx(2e-5)  # clamped
    assert position_lr(config, 100, 2.0) == pytest.approx(2.0 * math.sqrt(1e-3 * 1e-5))


def test_stream_rng_reproducible_and_stream_separated():
    a = stream_rng(7, STREAM_VIEW, 42).integers(1_000_000)
    b = stream_rng(7, STREAM_VIEW, 42).integers(1_000_000)
    c = stream_rng(7, STREAM_RATIO, 42).integers(1_000_000)
    d = stream_rng(7, STREAM_VIEW, 43).integers(1_000_000)
    assert a == b
    assert len({a, c, d}) == 3


def test_sampler_covers_all_ratios_and_views():
    config = tiny_config()
    ratios = set()
    views = set()
    for it in range(300):
        ratios.add(int(stream_rng(config.seed, STREAM_RATIO, it).integers(4)))
        views.add(int(stream_rng(config.seed, STREAM_VIEW, it).integers(5)))
    assert ratios == {0, 1, 2, 3}
    assert views == {0, 1, 2, 3, 4}


# -- losses ----------------------------------------------------------------------


def test_l1_loss_value_and_gradient(rng):
    image = rng.uniform(0.3, 0.7, size=(4, 5, 3))
    target = rng.uniform(0.0, 0.2, size=(4, 5, 3))  # diffs bounded away from 0
    loss, grad = l1_loss_grad(image, target)
    assert loss == pytest.approx(np.abs(image - target).mean())

    entries = {0: [0, 17, 59]}
    fd = finite_difference(lambda: l1_loss_grad(image, target)[0], [image], entries)
    for flat, ref in fd[0].items():
        assert grad.flat[flat] == pytest.approx(ref, rel=1e-6)


def test_importance_freshness_window():
    table = ImportanceTable(
        scores=np.ones(3), gamma=np.ones(3), iteration=100, n_views=1,
        ranking=np.arange(3),
    )
    ensure_fresh_importance(table, step=100, interval=50)
    ensure_fresh_importance(table, step=199, interval=50)
    with pytest.raises(StaleImportanceError):
        ensure_fresh_importance(table, step=200, interval=50)
    with pytest.raises(StaleImportanceError):
        ensure_fresh_importance(table, step=99, interval=50)


# -- densification ------------------------------------------------------------------


def densify_fixture():
    model = GaussianModel(
        positions=np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]),
        log_scales=np.log(np.array([[0.01] * 3, [0.01] * 3, [0.5] * 3, [0.01] * 3])),
        rotations=np.tile([1.0, 0, 0, 0], (4, 1)),
        opacities=np.array([2.0, -8.0, 2.0, 2.0]),  # row 1 is nearly transparent
        sh=np.zeros((4, 3, 1)),
    )
    accum = np.array([5.0, 5.0, 5.0, 0.0])
    count = np.ones(4)
    return model, accum, count


def test_densify_clones_splits_and_prunes():
    model, accum, count = densify_fixture()
    adam = Adam()
    adam.step("model.positions", model.positions, np.ones((4, 3)), lr=0.0)
    config = tiny_config(clone_grad_threshold=1.0, prune_opacity=0.005,
                         split_scale_fraction=0.1)
    out = densify_and_prune(model, adam, accum, count, config, extent=1.0, iteration=0)
    # Row 1 pruned; rows 0 and 2 grow (row 2 splits, its scale shrinks).
    assert out.n == 5
    np.testing.assert_array_equal(out.positions[0], model.positions[0])
    assert out.log_scales[1][0] == pytest.approx(np.log(0.5) - np.log(1.6))
    assert out.log_scales[4][0] == pytest.approx(np.log(0.5) - np.log(1.6))
    m, v, t = adam.state["model.positions"]
    assert m.shape == (5, 3)
    assert not m[3:].any()  # new rows start with zero moments


def test_densify_respects_capacity_cap():
    model, accum, count = densify_fixture()
    config = tiny_config(clone_grad_threshold=1.0, max_gaussians=4,
                         split_scale_fraction=10.0)
    out = densify_and_prune(model, Adam(), accum, count, config, extent=1.0, iteration=0)
    assert out.n == 4  # 3 survivors + room for exactly one child


# -- stages --------------------------------------------------------------------------


def test_stage1_reduces_photometric_error(tmp_path):
    scene = generate_synthetic(seed=5, n_points=40, n_views=3, image_size=12)
    config = tiny_config(stage1_iterations=60, densify_start=10**9)
    log = MetricsLog(tmp_path / "metrics.jsonl")
    model = stage1_fit(
        scene.init_model.copy(), scene.dataset, config, Adam(), log,
        scene_extent(scene.dataset.cameras),
    )
    first = log.rows[0]["loss"]
    last = log.rows[-1]["loss"]
    assert last < 0.6 * first
    assert np.isfinite(model.positions).all()
    lines = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert lines[-1] == log.rows[-1]


def stage2_fixture(config):
    scene = generate_synthetic(seed=9, n_points=30, n_views=3, image_size=10)
    rng = np.random.default_rng(0)
    model = scene.init_model.copy()
    selector = SelectorNet.initialize(rng, model, width=config.selector_width)
    field = TransformField.initialize(
        rng, model,
        base_resolution=tuple(config.field_resolution),
        feature_dim=config.field_feature_dim,
        hidden=config.field_hidden,
        combine=config.field_combine,
    )
    gi = compute_gi(model, scene.dataset.cameras, iteration=config.stage1_iterations)
    state = Stage2State(
        model=model, selector=selector, field=field, gi_table=gi,
        schedule=TemperatureSchedule.for_horizon(config.stage2_iterations),
    )
    return scene, state


def test_stage2_step_updates_every_parameter_group():
    config = tiny_config(stage1_iterations=0)
    scene, state = stage2_fixture(config)
    before = {
        "w_mix": state.selector.w_mix.copy(),
        "plane": state.field.planes[0][0].copy(),
        "fuse": state.field.fuse_w.copy(),
        "positions": state.model.positions.copy(),
        "opacities": state.model.opacities.copy(),
        "version": state.model.version,
    }
    adam = Adam()
    report = stage2_step(state, scene.dataset, config, adam, it=1, extent=2.5)
    assert report.total == pytest.approx(
        report.render_selected + report.render_full
        + config.gi_weight * report.guidance
        + config.sparsity_weight * report.sparsity
    )
    assert (state.selector.w_mix != before["w_mix"]).any()
    # Head output layers start at zero, so the first step reaches only them;
    # the grids and fusion move once the heads are nonzero.
    assert state.field.heads["positions"].w2.any()
    stage2_step(state, scene.dataset, config, adam, it=2, extent=2.5)
    assert (state.field.planes[0][0] != before["plane"]).any()
    assert (state.field.fuse_w != before["fuse"]).any()
    assert (state.model.positions != before["positions"]).any()
    assert (state.model.opacities != before["opacities"]).any()
    assert state.model.version > before["version"]
    ratio, frac = state.selected_fraction[-1]
    assert ratio in config.ratios and 0.0 <= frac <= 1.0
    np.testing.assert_allclose(np.linalg.norm(state.model.rotations, axis=1), 1.0)


def test_stage2_step_rejects_stale_importance():
    config = tiny_config(stage1_iterations=0, gi_refresh_interval=2)
    scene, state = stage2_fixture(config)
    state.gi_table = ImportanceTable(
        scores=state.gi_table.scores, gamma=state.gi_table.gamma,
        iteration=-100, n_views=3, ranking=state.gi_table.ranking,
    )
    with pytest.raises(StaleImportanceError):
        stage2_step(state, scene.dataset, config, Adam(), it=1, extent=2.5)


# -- joint gradient check -------------------------------------------------------------


SOFT_OPTIONS = RenderOptions(stop_threshold=0.0, ellipse_cutoff=None)


def joint_fd_scene():
    """A configuration with every piecewise boundary at a safe margin."""
    for seed in range(80):
        rng = np.random.default_rng(77_000 + seed)
        model = random_model(rng, n=8, degree=0, safe_colors=True)
        camera = ring_camera(0.7, size=10)
        selector = SelectorNet.initialize(rng, model, width=8)
        field = TransformField.initialize(
            rng, model, base_resolution=(4, 4, 4, 3), feature_dim=2, hidden=8
        )
        for name in ("positions", "log_scales", "rotations"):
            head = field.heads[name]
            head.w2 = rng.uniform(-0.02, 0.02, size=head.w2.shape)
            head.b2 = rng.uniform(-0.02, 0.02, size=head.b2.shape)
        target = rng.uniform(0.25, 0.75, size=(10, 10, 3))
        ratio, tau = 0.43, 0.7  # keeps the ratio off every e-axis grid line
        noise = gumbel_noise(5, 3, model.n)
        table = compute_gi(model, [camera])
        guide = guidance_mask(table, ratio)

        logits, sel_state = selector.forward(model, ratio)
        _, qcache = field.query_field(model.positions, ratio)
        coords = qcache["coords"]
        margins = [
            np.abs(sel_state.e_pre1).min(), np.abs(sel_state.e_pre2).min(),
            np.abs(sel_state.a_pre1).min(), np.abs(sel_state.a_pre2).min(),
            np.abs(qcache["pre"]).min(),
        ]
        for scale in field.level_scales:
            for axis in range(4):
                f = coords[:, axis] * (field.base_resolution[axis] * scale - 1)
                margins.append(np.abs(f - np.round(f)).min())
        depth_gap = np.diff(np.sort(
            (model.positions @ camera.rotation.T + camera.translation)[:, 2]
        )).min()
        margins.append(depth_gap)
        soft = 1 / (1 + np.exp(-(logits[:, 1] - logits[:, 0] + noise[:, 1] - noise[:, 0]) / tau))
        margins.append(abs(ratio - soft.mean()))
        # A kink is only a problem if an h-sized probe can cross it.
        if min(margins) > 1e-4:
            return model, selector, field, camera, target, guide, ratio, tau, noise
    raise AssertionError("no margin-safe scene found")


def test_joint_step_gradients_match_finite_differences():
    model, selector, field, camera, target, guide, ratio, tau, noise = joint_fd_scene()
    config = TrainConfig(gi_weight=1.0, sparsity_weight=0.01)

    def loss():
        return elastic_step_gradients(
            model, selector, field, camera, target, guide, ratio, tau, noise,
            config, options=SOFT_OPTIONS, hard=False,
        ).report.total

    step = elastic_step_gradients(
        model, selector, field, camera, target, guide, ratio, tau, noise,
        config, options=SOFT_OPTIONS, hard=False,
    )
    model_grads, field_grads = step.model, step.field

    rng = np.random.default_rng(1)
    sel_dict = step.selector.as_dict()
    probes = [
        ("selector", "w_mix", selector.w_mix, sel_dict["w_mix"]),
        ("selector", "w1a", selector.w1a, sel_dict["w1a"]),
        ("selector", "w1e", selector.w1e, sel_dict["w1e"]),
        ("field", "planes.0.0", field.planes[0][0], field_grads["planes.0.0"]),
        ("field", "planes.1.4", field.planes[1][4], field_grads["planes.1.4"]),
        ("field", "fuse.w", field.fuse_w, field_grads["fuse.w"]),
        ("field", "head.positions.w2", field.heads["positions"].w2,
         field_grads["head.positions.w2"]),
        ("model", "positions", model.positions, model_grads["positions"]),
        ("model", "log_scales", model.log_scales, model_grads["log_scales"]),
        ("model", "opacities", model.opacities, model_grads["opacities"]),
        ("model", "sh", model.sh, model_grads["sh"]),
        ("model", "rotations", model.rotations, model_grads["rotations"]),
    ]
    arrays = [p[2] for p in probes]
    entries = {
        i: rng.choice(arr.size, size=min(4, arr.size), replace=False).tolist()
        for i, arr in enumerate(arrays)
    }
    fd = finite_difference(loss, arrays, entries, h=1e-6)
    for i, (group, name, _, grad) in enumerate(probes):
        for flat, ref in fd[i].items():
            assert grad.flat[flat] == pytest.approx(ref, rel=1e-3, abs=1e-7), (
                group, name, flat,
            )


# -- orchestration ---------------------------------------------------------------------


def test_training_is_reproducible():
    scene = generate_synthetic(seed=2, n_points=30, n_views=3, image_size=10)
    config = tiny_config(stage1_iterations=12, stage2_iterations=10)
    a = train(scene.dataset, scene.init_model, config)
    b = train(scene.dataset, scene.init_model, config)
    np.testing.assert_array_equal(a.model.positions, b.model.positions)
    np.testing.assert_array_equal(a.selector.w_mix, b.selector.w_mix)
    np.testing.assert_array_equal(a.field.planes[0][0], b.field.planes[0][0])
    assert [r["loss"] for r in a.metrics.rows] == [r["loss"] for r in b.metrics.rows]

    c = train(scene.dataset, scene.init_model, tiny_config(
        stage1_iterations=12, stage2_iterations=10, seed=99))
    assert (c.model.positions != a.model.positions).any()


def test_bundle_save_load_round_trip(tmp_path):
    scene = generate_synthetic(seed=2, n_points=25, n_views=2, image_size=10)
    config = tiny_config(stage1_iterations=6, stage2_iterations=4)
    bundle = train(scene.dataset, scene.init_model, config)
    path = tmp_path / "trained.ckpt"
    save_bundle(path, bundle)
    back = load_bundle(path)
    np.testing.assert_array_equal(back.model.positions, bundle.model.positions)
    np.testing.assert_array_equal(back.selector.w_mix, bundle.selector.w_mix)
    np.testing.assert_array_equal(back.field.planes[1][3], bundle.field.planes[1][3])
    np.testing.assert_array_equal(back.field.bbox_lo, bundle.field.bbox_lo)
    np.testing.assert_array_equal(back.gi_table.ranking, bundle.gi_table.ranking)
    assert back.config == bundle.config
    assert back.iteration == bundle.iteration
    assert back.selected_fraction == bundle.selected_fraction
    assert len(back.selected_fraction) == config.stage2_iterations
    # Loaded bundle renders identically.
    cam = scene.dataset.cameras[0]
    img_a = render_image(bundle.model, cam, options=config.render_options())
    img_b = render_image(back.model, cam, options=config.render_options())
    np.testing.assert_array_equal(img_a, img_b)


def test_interrupted_run_resumes_bit_identically(tmp_path):
    scene = generate_synthetic(seed=5, n_points=25, n_views=3, image_size=10)
    config = tiny_config(stage1_iterations=8, stage2_iterations=12)

    straight = train(scene.dataset, scene.init_model, config)

    partial = train(scene.dataset, scene.init_model, config, stop_after=5)
    assert partial.iteration == 5
    path = tmp_path / "partial.ckpt"
    save_bundle(path, partial)
    resumed = train(scene.dataset, resume=load_bundle(path))

    assert resumed.iteration == straight.iteration == 12
    np.testing.assert_array_equal(resumed.model.positions, straight.model.positions)
    np.testing.assert_array_equal(resumed.model.log_scales, straight.model.log_scales)
    np.testing.assert_array_equal(resumed.model.rotations, straight.model.rotations)
    np.testing.assert_array_equal(resumed.model.opacities, straight.model.opacities)
    np.testing.assert_array_equal(resumed.selector.w_mix, straight.selector.w_mix)
    np.testing.assert_array_equal(resumed.selector.w1e, straight.selector.w1e)
    np.testing.assert_array_equal(
        resumed.field.planes[0][0], straight.field.planes[0][0])
    np.testing.assert_array_equal(resumed.field.fuse_w, straight.field.fuse_w)
    np.testing.assert_array_equal(
        resumed.field.heads["positions"].w2, straight.field.heads["positions"].w2)

    # The first resumed step reproduces the loss of the uninterrupted run.
    straight_losses = [
        r["loss"] for r in straight.metrics.rows if r["stage"] == 2 and r["step"] >= 5
    ]
    resumed_losses = [r["loss"] for r in resumed.metrics.rows if r["stage"] == 2]
    assert resumed_losses[0] == pytest.approx(straight_losses[0], abs=1e-6)

    # The kept-fraction trace carries across the checkpoint boundary.
    assert len(resumed.selected_fraction) == config.stage2_iterations
    assert resumed.selected_fraction == straight.selected_fraction
    assert resumed_losses == straight_losses
