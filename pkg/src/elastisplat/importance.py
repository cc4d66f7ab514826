"""Global importance scoring: which Gaussians matter most across training views.

Each Gaussian accumulates gamma(volume) * opacity * transmittance over every
pixel its 3-sigma footprint covers, in every view. Transmittance here is the
product of (1 - opacity) over the overlapping Gaussians in front, using
attribute opacities rather than pixel-blending alphas.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _raster
from .core import Camera, GaussianModel, project_gaussians
from .errors import InvalidAttributeError
from .render import build_pixel_lists
from .validation import floor_count

GAMMA_MODES = ("as_printed", "clamped01")


def gamma_volume(log_scales: np.ndarray, mode: str = "as_printed") -> np.ndarray:
    """Volume-based weighting gamma(s) = f(V(s) / V_90%).

    V(s) = |s1 s2 s3| pi / 3 on activated scales; V_90% is the linearly
    interpolated 90th percentile over the model. The printed form
    max(V / V90, 1) only boosts oversized Gaussians; `clamped01` instead
    clips the ratio into [0, 1], damping them.
    """
    if mode not in GAMMA_MODES:
        raise InvalidAttributeError(f"unknown gamma mode {mode!r}, expected {GAMMA_MODES}")
    volumes = np.abs(np.prod(np.exp(log_scales), axis=1)) * np.pi / 3.0
    v90 = np.percentile(volumes, 90)
    ratio = volumes / v90
    if mode == "as_printed":
        return np.maximum(ratio, 1.0)
    return np.clip(ratio, 0.0, 1.0)


@dataclass
class ImportanceTable:
    """Per-Gaussian global importance plus the ranking derived from it."""

    scores: np.ndarray  # (N,)
    gamma: np.ndarray  # (N,)
    iteration: int  # training step at which the table was computed
    n_views: int
    ranking: np.ndarray  # indices by descending score, ties to lower index

    @property
    def n(self) -> int:
        return self.scores.shape[0]


def compute_gi(
    model: GaussianModel,
    cameras: Sequence[Camera],
    gamma_mode: str = "as_printed",
    iteration: int = 0,
) -> ImportanceTable:
    """Score every Gaussian against the full (unmasked) model over `cameras`."""
    gamma = gamma_volume(model.log_scales, gamma_mode)
    alpha = model.opacity()
    scores = np.zeros(model.n)
    ones = np.ones(model.n)
    for camera in cameras:
        proj = project_gaussians(model, camera)
        offsets, counts, cgauss, _, _ = build_pixel_lists(proj, camera, ones, cutoff=9.0)
        _raster.importance_sweep(offsets, counts, cgauss, alpha, gamma, scores)
    ranking = np.argsort(-scores, kind="stable")
    return ImportanceTable(
        scores=scores,
        gamma=gamma,
        iteration=iteration,
        n_views=len(cameras),
        ranking=ranking,
    )


def guidance_mask(table: ImportanceTable, ratio: float) -> np.ndarray:
    """Binary target mask holding the floor(e * N) highest-importance Gaussians."""
    mask = np.zeros(table.n)
    k = floor_count(ratio, table.n)
    mask[table.ranking[:k]] = 1.0
    return mask
