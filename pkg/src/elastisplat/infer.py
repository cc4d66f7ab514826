"""Elastic inference: slice a trained model to any keep-ratio and score it.

`compress` is the deployment path: rank Gaussians by the selector's
noise-free keep probability, keep the top floor(e*N), and displace the
survivors with the transform field evaluated at that ratio. The two
reference compressors (uniform-random and importance-top-K, both without
the transform) isolate what the learned selection and the displacement
field each contribute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianModel
from .errors import InvalidAttributeError
from .field import transform_model
from .importance import guidance_mask
from .render import RenderOptions, psnr, render_image
from .selector import select_topk_inference
from .validation import check_finite, check_ratio, floor_count

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class CompactModel:
    """A ratio-e slice of a trained model with its transform applied.

    `indices` holds the kept rows of the source model in ascending order;
    `policy` records the selection rule that produced them.
    """

    model: GaussianModel
    ratio: float
    indices: np.ndarray
    source: str = ""
    policy: str = "selector-topk"

    @property
    def n(self) -> int:
        return self.model.n


def compress(bundle, ratio: float, source: str = "") -> CompactModel:
    """Keep the top floor(e*N) Gaussians and displace them for ratio e.

    Selection ranks the selector's noise-free keep probability; the ratio
    embedding shifts every logit by the same amount, so the ranking (and
    with it the nesting of keep sets across ratios) is ratio-independent.
    At e=1 the field is skipped entirely, matching the untouched full-model
    render that supervises training.
    """
    e = check_ratio(ratio)
    model = bundle.model
    logits, _ = bundle.selector.forward(model, e)
    _, indices = select_topk_inference(logits, e, bundle.config.tau_min)
    kept = model.subset(indices)
    if e == 1.0:
        return CompactModel(model=kept, ratio=e, indices=indices, source=source)
    moved, _ = transform_model(bundle.field, kept, e)
    return CompactModel(model=moved, ratio=e, indices=indices, source=source)


def compress_random(bundle, ratio: float, seed: int, source: str = "") -> CompactModel:
    """Baseline: floor(e*N) Gaussians chosen uniformly, no transform."""
    e = check_ratio(ratio)
    model = bundle.model
    k = floor_count(e, model.n)
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(model.n, size=k, replace=False))
    return CompactModel(
        model=model.subset(indices), ratio=e, indices=indices,
        source=source, policy="uniform-random",
    )


def compress_gi_topk(bundle, ratio: float, source: str = "") -> CompactModel:
    """Baseline: top floor(e*N) by global importance, no transform."""
    e = check_ratio(ratio)
    mask = guidance_mask(bundle.gi_table, e)
    indices = np.flatnonzero(mask)
    return CompactModel(
        model=bundle.model.subset(indices), ratio=e, indices=indices,
        source=source, policy="gi-topk",
    )


# -- metrics -------------------------------------------------------------------------


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _window_means(channel: np.ndarray, window: np.ndarray) -> np.ndarray:
    size = window.shape[0]
    patches = np.lib.stride_tricks.sliding_window_view(channel, (size, size))
    return np.einsum("ijkl,kl->ij", patches, window)


def ssim(image, reference, data_range: float = 1.0) -> float:
    """Mean structural similarity, 11x11 Gaussian window with sigma 1.5.

    Windows are fully interior (no padding); channels are scored
    independently and averaged.
    """
    a = check_finite("image", image)
    b = check_finite("reference", reference)
    if a.shape != b.shape:
        raise InvalidAttributeError(
            f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.ndim != 3:
        raise InvalidAttributeError(f"expected HxW or HxWxC image, got {a.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise InvalidAttributeError(
            f"image {a.shape[:2]} is smaller than the {SSIM_WINDOW}px window")

    window = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = _window_means(x, window)
        mu_y = _window_means(y, window)
        var_x = _window_means(x * x, window) - mu_x**2
        var_y = _window_means(y * y, window) - mu_y**2
        cov = _window_means(x * y, window) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        scores.append(float((num / den).mean()))
    return float(np.mean(scores))


# -- evaluation ----------------------------------------------------------------------


def evaluate_model(
    model: GaussianModel,
    dataset,
    view_indices,
    options: RenderOptions,
) -> tuple[float, float]:
    """Mean (PSNR, SSIM) of the model's renders over the given views."""
    if len(view_indices) == 0:
        raise InvalidAttributeError("no views to evaluate")
    psnrs, ssims = [], []
    for idx in view_indices:
        image = render_image(model, dataset.cameras[idx], options=options)
        target = dataset.images[idx]
        psnrs.append(psnr(image, target))
        ssims.append(ssim(image, target))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def eval_views(dataset) -> list:
    """Held-out views when the dataset has a split, every view otherwise."""
    views = list(dataset.test_indices())
    return views if views else list(range(len(dataset)))


def eval_ratios(
    bundle,
    dataset,
    ratios,
    views=None,
    options: RenderOptions | None = None,
) -> list[dict]:
    """One (ratio, psnr, ssim) row per requested ratio, averaged over views."""
    if views is None:
        views = eval_views(dataset)
    if options is None:
        options = bundle.config.render_options()
    rows = []
    for ratio in ratios:
        compact = compress(bundle, ratio)
        mean_psnr, mean_ssim = evaluate_model(compact.model, dataset, views, options)
        rows.append({"ratio": check_ratio(ratio), "psnr": mean_psnr, "ssim": mean_ssim})
    return rows
