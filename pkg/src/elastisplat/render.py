"""Differentiable rasterizer: forward compositing plus exact attribute gradients.

The forward pass keeps explicit per-pixel contributor lists (alpha, running
transmittance, Gaussian density) so the backward pass replays compositing
exactly rather than approximating it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _raster
from .core import (
    Camera,
    GaussianModel,
    ProjectedGaussians,
    eval_sh,
    eval_sh_backward,
    project_gaussians,
    projection_backward,
    view_directions,
    view_directions_backward,
)
from .errors import InvalidAttributeError, StaleGraphError

PSNR_CAP = 99.0


@dataclass(frozen=True)
class RenderOptions:
    """Rasterization knobs.

    `stop_threshold` ends a pixel once transmittance falls below it; set 0 to
    disable (oracle parity). `ellipse_cutoff` is the squared Mahalanobis
    radius limiting a Gaussian's pixel footprint; None removes the cutoff,
    making the composite smooth for finite-difference checks.
    """

    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    stop_threshold: float = 1e-4
    ellipse_cutoff: float | None = 9.0


@dataclass
class RenderGraph:
    """Everything the backward pass needs to replay one forward composite."""

    image: np.ndarray  # (H, W, 3)
    transmittance: np.ndarray  # (H, W) residual T per pixel
    camera: Camera
    options: RenderOptions
    proj: ProjectedGaussians
    colors: np.ndarray
    color_cache: dict
    dir_cache: dict
    dirs: np.ndarray
    mask: np.ndarray
    alpha_base: np.ndarray
    ohat: np.ndarray
    offsets: np.ndarray
    counts: np.ndarray
    n_used: np.ndarray
    cgauss: np.ndarray
    calpha: np.ndarray
    cg2: np.ndarray
    t_before: np.ndarray
    model_version: int
    model_n: int

    def contributors(self, py: int, px: int):
        """Depth-ordered (gaussian, alpha, T, G2) rows blended at one pixel."""
        pix = py * self.camera.width + px
        base = self.offsets[pix]
        rows = []
        for k in range(self.n_used[pix]):
            s = base + k
            rows.append((int(self.cgauss[s]), self.calpha[s], self.t_before[s], self.cg2[s]))
        return rows


@dataclass
class RenderGradients:
    """Per-attribute loss gradients for one rendered view."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    mask: np.ndarray

    def __iadd__(self, other: "RenderGradients"):
        self.positions += other.positions
        self.log_scales += other.log_scales
        self.rotations += other.rotations
        self.opacities += other.opacities
        self.sh += other.sh
        self.mask += other.mask
        return self

    @staticmethod
    def zeros(model: GaussianModel) -> "RenderGradients":
        return RenderGradients(
            np.zeros_like(model.positions),
            np.zeros_like(model.log_scales),
            np.zeros_like(model.rotations),
            np.zeros_like(model.opacities),
            np.zeros_like(model.sh),
            np.zeros(model.n),
        )


def depth_order(proj: ProjectedGaussians) -> np.ndarray:
    """Global front-to-back order over visible Gaussians, ties by index."""
    idx = np.flatnonzero(proj.valid)
    return idx[np.argsort(proj.depths[idx], kind="stable")]


def build_pixel_lists(proj: ProjectedGaussians, camera: Camera, ohat: np.ndarray, cutoff):
    """CSR contributor lists for one view; shared by renderer and importance."""
    order = depth_order(proj)
    n_pix = camera.height * camera.width
    if cutoff is None:
        cutoff_val = np.finfo(np.float64).max
        radii = np.where(proj.valid, float(np.hypot(camera.width, camera.height)), 0.0)
    else:
        cutoff_val = float(cutoff)
        radii = proj.radii
    counts = np.zeros(n_pix, dtype=np.int64)
    total = _raster.count_contributors(
        order, proj.means2d, proj.conic, radii, camera.height, camera.width, cutoff_val, counts
    )
    offsets = np.zeros(n_pix, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    cgauss = np.empty(total, dtype=np.int64)
    calpha = np.empty(total)
    cg2 = np.empty(total)
    cursor = np.zeros(n_pix, dtype=np.int64)
    _raster.fill_contributors(
        order, proj.means2d, proj.conic, radii, ohat, camera.height, camera.width,
        cutoff_val, offsets, cursor, cgauss, calpha, cg2,
    )
    return offsets, counts, cgauss, calpha, cg2


def render_forward(
    model: GaussianModel,
    camera: Camera,
    mask: np.ndarray | None = None,
    options: RenderOptions = RenderOptions(),
) -> RenderGraph:
    """Composite one view front to back and capture the blending graph.

    `mask` scales each Gaussian's activated opacity (selection gating);
    omitted means every Gaussian keeps its full opacity.
    """
    if mask is None:
        mask = np.ones(model.n)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (model.n,):
            raise InvalidAttributeError(f"mask has shape {mask.shape}, expected ({model.n},)")

    proj = project_gaussians(model, camera)
    dirs, dir_cache = view_directions(model.positions, camera)
    colors, color_cache = eval_sh(model.sh, dirs, model.sh_degree)
    alpha_base = model.opacity()
    ohat = alpha_base * mask

    offsets, counts, cgauss, calpha, cg2 = build_pixel_lists(
        proj, camera, ohat, options.ellipse_cutoff
    )
    n_pix = camera.height * camera.width
    image = np.zeros((n_pix, 3))
    t_before = np.ones(cgauss.shape[0])
    t_final = np.ones(n_pix)
    n_used = np.zeros(n_pix, dtype=np.int64)
    background = np.asarray(options.background, dtype=np.float64)
    _raster.blend(
        offsets, counts, cgauss, calpha, colors, background, options.stop_threshold,
        image, t_before, t_final, n_used,
    )
    return RenderGraph(
        image=image.reshape(camera.height, camera.width, 3),
        transmittance=t_final.reshape(camera.height, camera.width),
        camera=camera,
        options=options,
        proj=proj,
        colors=colors,
        color_cache=color_cache,
        dir_cache=dir_cache,
        dirs=dirs,
        mask=mask,
        alpha_base=alpha_base,
        ohat=ohat,
        offsets=offsets,
        counts=counts,
        n_used=n_used,
        cgauss=cgauss,
        calpha=calpha,
        cg2=cg2,
        t_before=t_before,
        model_version=model.version,
        model_n=model.n,
    )


def render_image(
    model: GaussianModel,
    camera: Camera,
    mask: np.ndarray | None = None,
    options: RenderOptions = RenderOptions(),
) -> np.ndarray:
    """Forward composite only; returns the (H, W, 3) image."""
    return render_forward(model, camera, mask, options).image


def render_backward(
    graph: RenderGraph, model: GaussianModel, grad_image: np.ndarray
) -> RenderGradients:
    """Exact gradients of a scalar loss through one recorded composite.

    `grad_image` is dL/dI with shape (H, W, 3). The mask gradient is exposed
    so a selection module can continue the chain through its own sampler.
    """
    if model.version != graph.model_version or model.n != graph.model_n:
        raise StaleGraphError(
            "render graph captured model version "
            f"{graph.model_version} (n={graph.model_n}), got version "
            f"{model.version} (n={model.n}); re-run render_forward"
        )
    grad_image = np.asarray(grad_image, dtype=np.float64)
    cam = graph.camera
    if grad_image.shape != (cam.height, cam.width, 3):
        raise InvalidAttributeError(
            f"grad_image has shape {grad_image.shape}, expected {(cam.height, cam.width, 3)}"
        )

    n = model.n
    grad_means2d = np.zeros((n, 2))
    grad_conic = np.zeros((n, 3))
    grad_colors = np.zeros((n, 3))
    grad_ohat = np.zeros(n)
    background = np.asarray(graph.options.background, dtype=np.float64)
    _raster.blend_backward(
        graph.offsets, graph.n_used, graph.cgauss, graph.calpha, graph.cg2,
        graph.t_before, graph.transmittance.reshape(-1),
        graph.proj.means2d, graph.proj.conic, graph.ohat, graph.colors,
        background, grad_image.reshape(-1, 3), cam.width,
        grad_means2d, grad_conic, grad_colors, grad_ohat,
    )

    grad_mask = grad_ohat * graph.alpha_base
    grad_alpha_base = grad_ohat * graph.mask
    grad_opacities = grad_alpha_base * graph.alpha_base * (1.0 - graph.alpha_base)

    grad_sh, grad_dirs = eval_sh_backward(
        model.sh, graph.dirs, model.sh_degree, graph.color_cache, grad_colors
    )
    grad_pos_color = view_directions_backward(graph.dir_cache, grad_dirs)

    grad_pos_proj, grad_log_scales, grad_rotations = projection_backward(
        graph.proj, model, cam, grad_means2d, grad_conic
    )
    return RenderGradients(
        positions=grad_pos_proj + grad_pos_color,
        log_scales=grad_log_scales,
        rotations=grad_rotations,
        opacities=grad_opacities,
        sh=grad_sh,
        mask=grad_mask,
    )


def psnr(image: np.ndarray, reference: np.ndarray, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio over [0, 1] images, capped for exact matches."""
    image = np.asarray(image, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if image.shape != reference.shape:
        raise InvalidAttributeError(
            f"image shapes differ: {image.shape} vs {reference.shape}"
        )
    mse = float(np.mean((image - reference) ** 2))
    if mse <= 10.0 ** (-cap / 10.0):
        return cap
    return 10.0 * np.log10(1.0 / mse)
