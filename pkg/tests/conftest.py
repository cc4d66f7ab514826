"""Shared fixtures: small random scenes sized for exhaustive checking."""

import numpy as np
import pytest

from elastisplat.core import Camera, GaussianModel, look_at_camera


def random_model(
    rng: np.random.Generator,
    n: int,
    degree: int = 1,
    center=(0.0, 0.0, 0.0),
    spread: float = 0.5,
    scale_range=(0.02, 0.15),
    opacity_logit_range=(-1.0, 2.5),
    safe_colors: bool = False,
) -> GaussianModel:
    """Random Gaussians near `center`.

    With safe_colors=True the SH coefficients keep every channel strictly
    inside the clamp, and opacities stay below the blending cap, so finite
    differences never straddle a kink.
    """
    k = (degree + 1) ** 2
    positions = center + rng.uniform(-spread, spread, size=(n, 3))
    log_scales = np.log(rng.uniform(*scale_range, size=(n, 3)))
    rotations = rng.normal(size=(n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    opacities = rng.uniform(*opacity_logit_range, size=n)
    sh = np.zeros((n, 3, k))
    if safe_colors:
        sh[:, :, 0] = (rng.uniform(0.25, 0.75, size=(n, 3)) - 0.5) / 0.28209479177387814
        if k > 1:
            sh[:, :, 1:] = rng.uniform(-0.04, 0.04, size=(n, 3, k - 1))
    else:
        sh[:, :, 0] = (rng.uniform(0.02, 0.98, size=(n, 3)) - 0.5) / 0.28209479177387814
        if k > 1:
            sh[:, :, 1:] = rng.uniform(-0.1, 0.1, size=(n, 3, k - 1))
    return GaussianModel(positions, log_scales, rotations, opacities, sh)


def ring_camera(
    azimuth: float,
    radius: float = 2.2,
    elevation: float = 0.35,
    size: int = 16,
    target=(0.0, 0.0, 0.0),
) -> Camera:
    eye = np.array(
        [
            radius * np.cos(azimuth),
            radius * np.sin(azimuth),
            radius * np.sin(elevation),
        ]
    )
    return look_at_camera(eye, target, fx=1.2 * size, width=size, height=size)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
