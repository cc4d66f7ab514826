"""Gaussian scene representation, camera model, projection, and spherical harmonics.

All math is plain numpy over float64 arrays. Quaternions are stored (w, x, y, z)
and matrices row-major; the camera looks down +z in a right-handed frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidAttributeError

# Low-pass floor added to every projected 2D covariance (keeps splats >= ~1 px).
COV2D_FLOOR = 0.3
# Blending alpha is clamped below 1 so transmittance never hits exact zero.
ALPHA_MAX = 0.99
# Gaussians contribute to a pixel within 3 sigma: d^T Sigma'^-1 d <= 9.
ELLIPSE_CUTOFF = 9.0

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def _as_f64(a, name: str, shape_tail: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if shape_tail is not None and arr.shape[1:] != shape_tail:
        raise InvalidAttributeError(
            f"{name} has shape {arr.shape}, expected (N, {', '.join(map(str, shape_tail))})"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidAttributeError(f"{name} contains non-finite values")
    return arr


@dataclass
class GaussianModel:
    """Point set of anisotropic 3D Gaussians in storage space.

    Storage conventions: `opacities` are logits (sigmoid on use), `log_scales`
    are natural logs of the per-axis standard deviations, `rotations` are
    (w, x, y, z) quaternions kept unit-length after every optimizer step, and
    `sh` holds per-channel spherical-harmonic coefficients, DC first.
    """

    positions: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) quaternion (w, x, y, z)
    opacities: np.ndarray  # (N,) logit
    sh: np.ndarray  # (N, 3, K), K = (degree + 1) ** 2
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.positions = _as_f64(self.positions, "positions", (3,))
        self.log_scales = _as_f64(self.log_scales, "log_scales", (3,))
        self.rotations = _as_f64(self.rotations, "rotations", (4,))
        self.opacities = _as_f64(self.opacities, "opacities", ())
        self.sh = _as_f64(self.sh, "sh")
        n = self.positions.shape[0]
        for name in ("log_scales", "rotations", "opacities", "sh"):
            if getattr(self, name).shape[0] != n:
                raise InvalidAttributeError(
                    f"{name} holds {getattr(self, name).shape[0]} rows, expected {n}"
                )
        if self.sh.ndim != 3 or self.sh.shape[1] != 3:
            raise InvalidAttributeError(f"sh has shape {self.sh.shape}, expected (N, 3, K)")
        k = self.sh.shape[2]
        if k not in (1, 4, 9, 16):
            raise InvalidAttributeError(
                f"sh holds {k} coefficients per channel, expected (d+1)^2 for d in 0..3"
            )
        if np.any(np.linalg.norm(self.rotations, axis=1) < 1e-12):
            raise InvalidAttributeError("rotations contain a near-zero quaternion")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.sh.shape[2])) - 1

    def bump_version(self) -> None:
        """Mark the model mutated; outstanding render graphs become stale."""
        self.version += 1

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def opacity(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacities))

    def unit_rotations(self) -> np.ndarray:
        return self.rotations / np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def renormalize_rotations(self) -> None:
        self.rotations = self.unit_rotations()

    def copy(self) -> "GaussianModel":
        return GaussianModel(
            self.positions.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacities.copy(),
            self.sh.copy(),
        )

    def subset(self, index: np.ndarray) -> "GaussianModel":
        """New model holding the rows in `index`, original order preserved."""
        index = np.asarray(index)
        return GaussianModel(
            self.positions[index],
            self.log_scales[index],
            self.rotations[index],
            self.opacities[index],
            self.sh[index],
        )

    def bounding_box(self, margin: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned position bounds, padded by `margin` of the extent."""
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        pad = (hi - lo).max() * margin + 1e-9
        return lo - pad, hi + pad


@dataclass(frozen=True)
class Camera:
    """Pinhole view: world-to-camera transform plus intrinsics.

    `world_to_camera` maps homogeneous world points by left multiplication;
    pixel (row v, col u) samples the image plane at continuous (u, v).
    """

    world_to_camera: np.ndarray  # (4, 4) row-major
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.05
    far: float = 100.0
    image_path: str = ""

    def __post_init__(self):
        w = _as_f64(self.world_to_camera, "world_to_camera")
        if w.shape != (4, 4):
            raise InvalidAttributeError(f"world_to_camera has shape {w.shape}, expected (4, 4)")
        object.__setattr__(self, "world_to_camera", w)
        if self.near <= 0 or self.far <= self.near:
            raise InvalidAttributeError("camera requires 0 < near < far")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation


def look_at_camera(
    eye,
    target,
    up=(0.0, 0.0, 1.0),
    fx: float = 64.0,
    fy: float | None = None,
    width: int = 64,
    height: int = 64,
    cx: float | None = None,
    cy: float | None = None,
    near: float = 0.05,
    far: float = 100.0,
) -> Camera:
    """Camera at `eye` looking toward `target`, +z forward, image v downward."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    nrm = np.linalg.norm(right)
    if nrm < 1e-9:
        raise InvalidAttributeError("look_at: view direction is parallel to up")
    right = right / nrm
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    w = np.eye(4)
    w[:3, :3] = r
    w[:3, 3] = -r @ eye
    return Camera(
        world_to_camera=w,
        fx=fx,
        fy=fx if fy is None else fy,
        cx=(width / 2.0) if cx is None else cx,
        cy=(height / 2.0) if cy is None else cy,
        width=width,
        height=height,
        near=near,
        far=far,
    )


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternion_to_rotation(q_unit: np.ndarray) -> np.ndarray:
    """Rotation matrices (N, 3, 3) from unit quaternions (N, 4), (w, x, y, z)."""
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    r = np.empty((q_unit.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def rotation_backward(q_unit: np.ndarray, grad_r: np.ndarray) -> np.ndarray:
    """Pull a rotation-matrix gradient (N, 3, 3) back to unit quaternions."""
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    g = grad_r
    dq = np.empty_like(q_unit)
    dq[:, 0] = 2 * (
        -z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0]
        - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1]
    )
    dq[:, 1] = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0]
        - 2 * x * g[:, 1, 1] - w * g[:, 1, 2] + z * g[:, 2, 0]
        + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    dq[:, 2] = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2]
        + x * g[:, 1, 0] + z * g[:, 1, 2] - w * g[:, 2, 0]
        + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    dq[:, 3] = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2]
        + w * g[:, 1, 0] - 2 * z * g[:, 1, 1] + y * g[:, 1, 2]
        + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    return dq


def normalize_backward(raw: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Chain a gradient through v / ||v|| back to the raw vector."""
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    unit = raw / norm
    inner = np.sum(unit * grad_unit, axis=-1, keepdims=True)
    return (grad_unit - unit * inner) / norm


def build_covariance(log_scales: np.ndarray, rotations: np.ndarray):
    """3D covariances Sigma = R S S^T R^T from storage-space scale and rotation.

    Returns (cov (N,3,3), cache) where the cache carries the intermediates the
    backward pass reuses. Rotations are normalized internally, so the forward
    is well defined for any finite nonzero quaternion.
    """
    q_unit = normalize_quaternions(rotations)
    r = quaternion_to_rotation(q_unit)
    s = np.exp(log_scales)
    m = r * s[:, None, :]  # R @ diag(S)
    cov = m @ np.swapaxes(m, 1, 2)
    return cov, {"q_unit": q_unit, "r": r, "s": s, "m": m}


def covariance_backward(cache: dict, rotations: np.ndarray, grad_cov: np.ndarray):
    """Gradients of Sigma = (RS)(RS)^T w.r.t. log-scales and raw quaternions.

    `grad_cov` is the full-matrix gradient (both off-diagonal entries counted).
    """
    r, s, m = cache["r"], cache["s"], cache["m"]
    grad_m = 2.0 * grad_cov @ m
    grad_s = np.einsum("nik,nik->nk", r, grad_m)
    grad_log_scales = grad_s * s
    grad_r = grad_m * s[:, None, :]
    grad_q_unit = rotation_backward(cache["q_unit"], grad_r)
    grad_rotations = normalize_backward(rotations, grad_q_unit)
    return grad_log_scales, grad_rotations


@dataclass
class ProjectedGaussians:
    """Per-view screen-space quantities plus cached forward intermediates."""

    means2d: np.ndarray  # (N, 2) pixel coords
    cov2d: np.ndarray  # (N, 3) packed (a, b, c) with low-pass floor applied
    conic: np.ndarray  # (N, 3) packed inverse of cov2d
    depths: np.ndarray  # (N,) camera-space z
    radii: np.ndarray  # (N,) 3-sigma pixel radius, 0 for culled
    valid: np.ndarray  # (N,) bool, inside [near, far]
    cam_points: np.ndarray  # (N, 3)
    cov3d: np.ndarray  # (N, 3, 3)
    cov_cache: dict
    jacobians: np.ndarray  # (N, 2, 3)


def project_gaussians(model: GaussianModel, camera: Camera) -> ProjectedGaussians:
    """Project every Gaussian into one view.

    Applies Sigma' = J W Sigma W^T J^T on the 2x2 upper-left block and adds
    the low-pass floor; Gaussians outside [near, far] get radius 0.
    """
    rw = camera.rotation
    tw = camera.translation
    t = model.positions @ rw.T + tw
    valid = (t[:, 2] >= camera.near) & (t[:, 2] <= camera.far)
    tz = np.where(valid, t[:, 2], 1.0)

    n = model.n
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / tz
    jac[:, 0, 2] = -camera.fx * t[:, 0] / tz**2
    jac[:, 1, 1] = camera.fy / tz
    jac[:, 1, 2] = -camera.fy * t[:, 1] / tz**2

    cov3d, cov_cache = build_covariance(model.log_scales, model.rotations)
    p = jac @ rw
    cov2d_full = p @ cov3d @ np.swapaxes(p, 1, 2)
    a = cov2d_full[:, 0, 0] + COV2D_FLOOR
    b = cov2d_full[:, 0, 1]
    c = cov2d_full[:, 1, 1] + COV2D_FLOOR

    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = np.where(valid, 3.0 * np.sqrt(lam_max), 0.0)

    means2d = np.stack(
        [camera.fx * t[:, 0] / tz + camera.cx, camera.fy * t[:, 1] / tz + camera.cy], axis=1
    )
    return ProjectedGaussians(
        means2d=means2d,
        cov2d=np.stack([a, b, c], axis=1),
        conic=conic,
        depths=t[:, 2],
        radii=radii,
        valid=valid,
        cam_points=t,
        cov3d=cov3d,
        cov_cache=cov_cache,
        jacobians=jac,
    )


def projection_backward(
    proj: ProjectedGaussians,
    model: GaussianModel,
    camera: Camera,
    grad_means2d: np.ndarray,
    grad_conic: np.ndarray,
):
    """Pull screen-space gradients back to positions, log-scales, rotations.

    `grad_conic` is packed (A0, A1, A2) treating the quadratic form
    A0 dx^2 + 2 A1 dx dy + A2 dy^2 as a function of three independents.
    Culled Gaussians receive zero gradient.
    """
    rw = camera.rotation
    live = proj.valid[:, None]
    grad_means2d = np.where(live, grad_means2d, 0.0)
    grad_conic = np.where(live, grad_conic, 0.0)

    # conic -> floored 2D covariance: dSigma' = -A dA A with symmetric packing.
    ga = np.empty((model.n, 2, 2))
    ga[:, 0, 0] = grad_conic[:, 0]
    ga[:, 0, 1] = ga[:, 1, 0] = 0.5 * grad_conic[:, 1]
    ga[:, 1, 1] = grad_conic[:, 2]
    a_full = np.empty_like(ga)
    a_full[:, 0, 0] = proj.conic[:, 0]
    a_full[:, 0, 1] = a_full[:, 1, 0] = proj.conic[:, 1]
    a_full[:, 1, 1] = proj.conic[:, 2]
    g_cov2d = -a_full @ ga @ a_full

    # Sigma' = P Sigma P^T (floor is additive, no gradient).
    p = proj.jacobians @ rw
    grad_cov3d = np.swapaxes(p, 1, 2) @ g_cov2d @ p
    grad_log_scales, grad_rotations = covariance_backward(
        proj.cov_cache, model.rotations, grad_cov3d
    )

    # Gradient through J both directly (mean2d) and via Sigma' = J M J^T.
    m_cam = rw @ proj.cov3d @ rw.T
    grad_j = 2.0 * g_cov2d @ proj.jacobians @ m_cam

    t = proj.cam_points
    tz = np.where(proj.valid, t[:, 2], 1.0)
    fx, fy = camera.fx, camera.fy
    grad_t = np.einsum("nij,ni->nj", proj.jacobians, grad_means2d)
    grad_t[:, 0] += grad_j[:, 0, 2] * (-fx / tz**2)
    grad_t[:, 1] += grad_j[:, 1, 2] * (-fy / tz**2)
    grad_t[:, 2] += (
        grad_j[:, 0, 0] * (-fx / tz**2)
        + grad_j[:, 0, 2] * (2.0 * fx * t[:, 0] / tz**3)
        + grad_j[:, 1, 1] * (-fy / tz**2)
        + grad_j[:, 1, 2] * (2.0 * fy * t[:, 1] / tz**3)
    )
    grad_positions = np.where(live, grad_t @ rw, 0.0)
    grad_log_scales = np.where(live, grad_log_scales, 0.0)
    grad_rotations = np.where(live, grad_rotations, 0.0)
    return grad_positions, grad_log_scales, grad_rotations


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real spherical-harmonic basis values (N, (degree+1)^2) for unit dirs."""
    n = dirs.shape[0]
    k = (degree + 1) ** 2
    out = np.empty((n, k))
    out[:, 0] = SH_C0
    if degree == 0:
        return out
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    if degree == 1:
        return out
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[:, 4] = SH_C2[0] * xy
    out[:, 5] = SH_C2[1] * yz
    out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = SH_C2[3] * xz
    out[:, 8] = SH_C2[4] * (xx - yy)
    if degree == 2:
        return out
    out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = SH_C3[1] * xy * z
    out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    out[:, 14] = SH_C3[5] * z * (xx - yy)
    out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Partials of each basis function w.r.t. the direction components.

    Returns (N, K, 3); the basis is treated as a polynomial on R^3, the unit
    constraint is handled by the caller's normalization chain.
    """
    n = dirs.shape[0]
    k = (degree + 1) ** 2
    g = np.zeros((n, k, 3))
    if degree == 0:
        return g
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    g[:, 1, 1] = -SH_C1
    g[:, 2, 2] = SH_C1
    g[:, 3, 0] = -SH_C1
    if degree == 1:
        return g
    g[:, 4, 0] = SH_C2[0] * y
    g[:, 4, 1] = SH_C2[0] * x
    g[:, 5, 1] = SH_C2[1] * z
    g[:, 5, 2] = SH_C2[1] * y
    g[:, 6, 0] = SH_C2[2] * (-2.0 * x)
    g[:, 6, 1] = SH_C2[2] * (-2.0 * y)
    g[:, 6, 2] = SH_C2[2] * (4.0 * z)
    g[:, 7, 0] = SH_C2[3] * z
    g[:, 7, 2] = SH_C2[3] * x
    g[:, 8, 0] = SH_C2[4] * (2.0 * x)
    g[:, 8, 1] = SH_C2[4] * (-2.0 * y)
    if degree == 2:
        return g
    xx, yy, zz = x * x, y * y, z * z
    g[:, 9, 0] = SH_C3[0] * 6.0 * x * y
    g[:, 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
    g[:, 10, 0] = SH_C3[1] * y * z
    g[:, 10, 1] = SH_C3[1] * x * z
    g[:, 10, 2] = SH_C3[1] * x * y
    g[:, 11, 0] = SH_C3[2] * (-2.0 * x * y)
    g[:, 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
    g[:, 11, 2] = SH_C3[2] * (8.0 * y * z)
    g[:, 12, 0] = SH_C3[3] * (-6.0 * x * z)
    g[:, 12, 1] = SH_C3[3] * (-6.0 * y * z)
    g[:, 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    g[:, 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
    g[:, 13, 1] = SH_C3[4] * (-2.0 * x * y)
    g[:, 13, 2] = SH_C3[4] * (8.0 * x * z)
    g[:, 14, 0] = SH_C3[5] * (2.0 * x * z)
    g[:, 14, 1] = SH_C3[5] * (-2.0 * y * z)
    g[:, 14, 2] = SH_C3[5] * (xx - yy)
    g[:, 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
    g[:, 15, 1] = SH_C3[6] * (-6.0 * x * y)
    return g


def eval_sh(sh: np.ndarray, dirs_unit: np.ndarray, degree: int):
    """View-dependent RGB from SH coefficients along unit directions.

    Colors are offset by +0.5 and clamped at zero from below, matching the
    DC-centered coefficient convention. Returns (colors, cache).
    """
    k = (degree + 1) ** 2
    if sh.shape[2] != k:
        raise InvalidAttributeError(
            f"sh holds {sh.shape[2]} coefficients per channel, degree {degree} needs {k}"
        )
    basis = sh_basis(dirs_unit, degree)
    raw = np.einsum("nck,nk->nc", sh, basis) + 0.5
    colors = np.maximum(raw, 0.0)
    return colors, {"basis": basis, "raw": raw}


def eval_sh_backward(
    sh: np.ndarray, dirs_unit: np.ndarray, degree: int, cache: dict, grad_colors: np.ndarray
):
    """Gradients of clamped SH colors w.r.t. coefficients and unit directions."""
    active = (cache["raw"] > 0.0).astype(np.float64)
    g = grad_colors * active
    grad_sh = np.einsum("nc,nk->nck", g, cache["basis"])
    basis_grad = sh_basis_grad(dirs_unit, degree)
    grad_dirs = np.einsum("nc,nck,nkd->nd", g, sh, basis_grad)
    return grad_sh, grad_dirs


def view_directions(positions: np.ndarray, camera: Camera):
    """Unit directions from the camera center to each Gaussian, with cache."""
    rel = positions - camera.center
    dist = np.linalg.norm(rel, axis=1, keepdims=True)
    return rel / dist, {"rel": rel, "dist": dist}


def view_directions_backward(cache: dict, grad_dirs: np.ndarray) -> np.ndarray:
    """Gradient of unit view directions w.r.t. the Gaussian positions."""
    return normalize_backward(cache["rel"], grad_dirs)
