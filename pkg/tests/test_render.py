"""Rasterizer checks: naive-blending oracle, exact gradients, invariants."""

import numpy as np
import pytest

from elastisplat.core import GaussianModel
from elastisplat.errors import InvalidAttributeError, StaleGraphError
from elastisplat.render import (
    RenderGradients,
    RenderOptions,
    psnr,
    render_backward,
    render_forward,
    render_image,
)

from .conftest import random_model, ring_camera
from .oracles import finite_difference, oracle_render

ORACLE_PARITY = RenderOptions(stop_threshold=0.0)
SMOOTH = RenderOptions(stop_threshold=0.0, ellipse_cutoff=None)


def weighted_loss(model, cam, mask, options, weights):
    return float(np.sum(weights * render_image(model, cam, mask, options)))


class TestForwardOracle:
    def test_matches_naive_blending(self, rng):
        for trial in range(20):
            n = int(rng.integers(1, 24))
            model = random_model(rng, n)
            cam = ring_camera(rng.uniform(0, 2 * np.pi), size=12)
            mask = rng.uniform(0.0, 1.0, size=n) if trial % 2 else None
            bg = tuple(rng.uniform(0, 1, size=3)) if trial % 3 == 0 else (0.0, 0.0, 0.0)
            opts = RenderOptions(background=bg, stop_threshold=0.0)
            img = render_image(model, cam, mask, opts)
            ref = oracle_render(model, cam, mask, background=bg)
            np.testing.assert_allclose(img, ref, atol=1e-6)

    def test_zero_mask_gives_background(self, rng):
        model = random_model(rng, 10)
        cam = ring_camera(0.4)
        bg = (0.2, 0.5, 0.9)
        img = render_image(model, cam, np.zeros(10), RenderOptions(background=bg))
        np.testing.assert_allclose(img, np.broadcast_to(bg, img.shape), atol=1e-12)

    def test_deterministic(self, rng):
        model = random_model(rng, 15)
        cam = ring_camera(1.1)
        a = render_image(model, cam)
        b = render_image(model, cam)
        assert np.array_equal(a, b)

    def test_early_termination_error_bounded(self, rng):
        # Opaque stack drives T below the threshold; truncation error stays
        # within the residual transmittance at the stop.
        model = random_model(rng, 40, spread=0.08, opacity_logit_range=(3.0, 5.0))
        cam = ring_camera(0.2, size=12)
        full = render_image(model, cam, options=RenderOptions(stop_threshold=0.0))
        cut = render_image(model, cam, options=RenderOptions(stop_threshold=1e-4))
        assert np.max(np.abs(full - cut)) <= 2e-4

    def test_mask_linearity_below_clamp(self, rng):
        model = random_model(rng, 1, spread=0.0, opacity_logit_range=(1.0, 1.0))
        cam = ring_camera(0.9, size=16)
        g_full = render_forward(model, cam, np.ones(1), ORACLE_PARITY)
        g_part = render_forward(model, cam, np.array([0.3]), ORACLE_PARITY)
        pix = np.argwhere(g_full.counts.reshape(cam.height, cam.width) > 0)
        assert len(pix) > 0
        for py, px in pix:
            rows_f = g_full.contributors(py, px)
            rows_p = g_part.contributors(py, px)
            assert len(rows_f) == len(rows_p) == 1
            np.testing.assert_allclose(rows_p[0][1], 0.3 * rows_f[0][1], rtol=1e-12)

    def test_transmittance_telescopes(self, rng):
        model = random_model(rng, 20)
        cam = ring_camera(2.0, size=12)
        graph = render_forward(model, cam, options=ORACLE_PARITY)
        for py in range(cam.height):
            for px in range(cam.width):
                rows = graph.contributors(py, px)
                total = sum(a * t for _, a, t, _ in rows)
                assert abs(total + graph.transmittance[py, px] - 1.0) < 1e-9


class TestBackward:
    def sample_entries(self, rng, model, mask, per_tensor=6):
        arrays = [
            model.positions, model.log_scales, model.rotations,
            model.opacities, model.sh, mask,
        ]
        entries = {
            i: sorted(rng.choice(a.size, size=min(per_tensor, a.size), replace=False))
            for i, a in enumerate(arrays)
        }
        return arrays, entries

    def check_gradients(self, rng, options, n=8, tol=1e-4, size=10):
        model = random_model(rng, n, safe_colors=True)
        cam = ring_camera(rng.uniform(0, 2 * np.pi), size=size)
        mask = rng.uniform(0.3, 1.0, size=n)
        weights = rng.normal(size=(cam.height, cam.width, 3))

        graph = render_forward(model, cam, mask, options)
        grads = render_backward(graph, model, weights)
        analytic = [
            grads.positions, grads.log_scales, grads.rotations,
            grads.opacities, grads.sh, grads.mask,
        ]
        arrays, entries = self.sample_entries(rng, model, mask)
        fd = finite_difference(
            lambda: weighted_loss(model, cam, mask, options, weights),
            arrays, entries, h=1e-6,
        )
        for ai, per in fd.items():
            for flat, val in per.items():
                got = analytic[ai].flat[flat]
                assert abs(got - val) <= tol * max(1.0, abs(val)), (
                    f"tensor {ai} entry {flat}: analytic {got}, fd {val}"
                )

    def test_gradients_smooth_mode(self, rng):
        for _ in range(4):
            self.check_gradients(rng, SMOOTH)

    def test_gradients_production_footprint(self, rng):
        # Same math with the 3-sigma cutoff active; seeds chosen small enough
        # that no probe straddles the footprint boundary.
        self.check_gradients(rng, ORACLE_PARITY, n=6, size=8)

    def test_stale_graph_rejected(self, rng):
        model = random_model(rng, 5)
        cam = ring_camera(0.3)
        graph = render_forward(model, cam)
        model.bump_version()
        with pytest.raises(StaleGraphError):
            render_backward(graph, model, np.zeros((cam.height, cam.width, 3)))

    def test_bad_grad_shape_rejected(self, rng):
        model = random_model(rng, 5)
        cam = ring_camera(0.3)
        graph = render_forward(model, cam)
        with pytest.raises(InvalidAttributeError):
            render_backward(graph, model, np.zeros((2, 2, 3)))

    def test_gradients_accumulate(self, rng):
        model = random_model(rng, 4)
        z = RenderGradients.zeros(model)
        z += z
        assert np.all(z.positions == 0.0)


class TestPsnr:
    def test_exact_match_capped(self):
        img = np.full((4, 4, 3), 0.25)
        assert psnr(img, img) == 99.0

    def test_quarter_mse(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.5)
        assert abs(psnr(a, b) - 6.020599913279624) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(InvalidAttributeError):
            psnr(np.zeros((2, 2, 3)), np.zeros((3, 3, 3)))
