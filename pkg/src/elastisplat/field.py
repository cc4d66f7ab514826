"""Ratio-conditioned transform field over (x, y, z, e).

Six axis-pair plane grids per resolution level are interpolated bilinearly at
each Gaussian's original position and the requested keep-ratio, combined per
level, fused by a small MLP, and decoded by three heads into additive
displacements for position, log-scale, and rotation. Head output layers start
at zero, so a fresh field is exactly the identity at every ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianModel, normalize_backward, normalize_quaternions
from .errors import InvalidAttributeError
from .validation import check_ratio

# Axis pairs over the (x, y, z, e) coordinate, three spatial + three ratio-mixed.
PLANE_AXES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
HEAD_NAMES = ("positions", "log_scales", "rotations")
HEAD_DIMS = {"positions": 3, "log_scales": 3, "rotations": 4}
COMBINE_MODES = ("product", "concat")


@dataclass
class MlpHead:
    """Two-layer decoder; the output layer is zero-initialized."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class TransformField:
    planes: list  # [level][plane index] -> (Ri, Rj, F) grid
    fuse_w: np.ndarray  # (C, hidden)
    fuse_b: np.ndarray  # (hidden,)
    heads: dict  # name -> MlpHead
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    base_resolution: tuple  # (rx, ry, rz, re)
    level_scales: tuple
    feature_dim: int
    combine: str

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        model: GaussianModel,
        base_resolution: tuple = (64, 64, 64, 100),
        level_scales: tuple = (1, 2),
        feature_dim: int = 4,
        hidden: int = 64,
        combine: str = "product",
    ) -> "TransformField":
        """Grids near the combine identity, random fusion, zero head outputs."""
        if combine not in COMBINE_MODES:
            raise InvalidAttributeError(f"unknown combine mode {combine!r}")
        if len(base_resolution) != 4 or any(r < 2 for r in base_resolution):
            raise InvalidAttributeError(
                f"base_resolution needs four axis sizes >= 2, got {base_resolution}"
            )
        planes = []
        for scale in level_scales:
            level = []
            for ai, aj in PLANE_AXES:
                shape = (base_resolution[ai] * scale, base_resolution[aj] * scale, feature_dim)
                if combine == "product":
                    level.append(rng.uniform(0.9, 1.1, size=shape))
                else:
                    level.append(rng.uniform(-0.1, 0.1, size=shape))
            planes.append(level)
        per_level = feature_dim if combine == "product" else 6 * feature_dim
        c = per_level * len(level_scales)
        lo, hi = model.bounding_box()
        field = cls(
            planes=planes,
            fuse_w=rng.uniform(-1.0, 1.0, size=(c, hidden)) / np.sqrt(c),
            fuse_b=np.zeros(hidden),
            heads={},
            bbox_lo=lo,
            bbox_hi=hi,
            base_resolution=tuple(base_resolution),
            level_scales=tuple(level_scales),
            feature_dim=feature_dim,
            combine=combine,
        )
        for name in HEAD_NAMES:
            field.heads[name] = MlpHead(
                w1=rng.uniform(-1.0, 1.0, size=(hidden, hidden)) / np.sqrt(hidden),
                b1=np.zeros(hidden),
                w2=np.zeros((hidden, HEAD_DIMS[name])),
                b2=np.zeros(HEAD_DIMS[name]),
            )
        return field

    def named_parameters(self):
        """Flat (name, array) view used by the optimizer and checkpoints."""
        out = []
        for li, level in enumerate(self.planes):
            for pi, grid in enumerate(level):
                out.append((f"planes.{li}.{pi}", grid))
        out.append(("fuse.w", self.fuse_w))
        out.append(("fuse.b", self.fuse_b))
        for name in HEAD_NAMES:
            head = self.heads[name]
            out.extend(
                [
                    (f"head.{name}.w1", head.w1),
                    (f"head.{name}.b1", head.b1),
                    (f"head.{name}.w2", head.w2),
                    (f"head.{name}.b2", head.b2),
                ]
            )
        return out

    def zero_gradients(self) -> dict:
        return {name: np.zeros_like(arr) for name, arr in self.named_parameters()}

    # -- field query ----------------------------------------------------------

    def _coords(self, positions: np.ndarray, ratio: float):
        span = self.bbox_hi - self.bbox_lo
        raw = np.empty((positions.shape[0], 4))
        raw[:, :3] = (positions - self.bbox_lo) / span
        raw[:, 3] = ratio
        coords = np.clip(raw, 0.0, 1.0)
        inside = (raw > 0.0) & (raw < 1.0)
        return coords, inside, span

    def query_field(self, positions: np.ndarray, ratio: float):
        """Fused feature vector (N, hidden) at (position, ratio); with cache."""
        ratio = check_ratio(ratio)
        coords, inside, span = self._coords(positions, ratio)
        level_caches = []
        level_feats = []
        for level in self.planes:
            plane_caches = []
            interps = []
            for (ai, aj), grid in zip(PLANE_AXES, level):
                cache = _interp_forward(grid, coords[:, ai], coords[:, aj])
                plane_caches.append(cache)
                interps.append(cache["value"])
            if self.combine == "product":
                stack = np.stack(interps)  # (6, N, F)
                prefix = np.ones_like(stack)
                suffix = np.ones_like(stack)
                for k in range(1, 6):
                    prefix[k] = prefix[k - 1] * stack[k - 1]
                    suffix[5 - k] = suffix[6 - k] * stack[6 - k]
                feat = prefix[5] * stack[5]
                level_caches.append(
                    {"planes": plane_caches, "prefix": prefix, "suffix": suffix}
                )
            else:
                feat = np.concatenate(interps, axis=1)
                level_caches.append({"planes": plane_caches})
            level_feats.append(feat)
        fm = np.concatenate(level_feats, axis=1)
        pre = fm @ self.fuse_w + self.fuse_b
        features = np.maximum(pre, 0.0)
        cache = {
            "coords": coords,
            "inside": inside,
            "span": span,
            "levels": level_caches,
            "fm": fm,
            "pre": pre,
        }
        return features, cache

    def query_backward(self, cache: dict, grad_features: np.ndarray, param_grads: dict):
        """Accumulate plane/fusion gradients; return the query-position grad."""
        g_pre = grad_features * (cache["pre"] > 0.0)
        param_grads["fuse.w"] += cache["fm"].T @ g_pre
        param_grads["fuse.b"] += g_pre.sum(axis=0)
        grad_fm = g_pre @ self.fuse_w.T

        n = grad_features.shape[0]
        grad_coords = np.zeros((n, 4))
        offset = 0
        for li, (level, lcache) in enumerate(zip(self.planes, cache["levels"])):
            if self.combine == "product":
                width = self.feature_dim
                grad_level = grad_fm[:, offset : offset + width]
                for pi, ((ai, aj), pcache) in enumerate(zip(PLANE_AXES, lcache["planes"])):
                    grad_interp = grad_level * lcache["prefix"][pi] * lcache["suffix"][pi]
                    gi, gj = _interp_backward(
                        self.planes[li][pi], pcache, grad_interp,
                        param_grads[f"planes.{li}.{pi}"],
                    )
                    grad_coords[:, ai] += gi
                    grad_coords[:, aj] += gj
            else:
                width = 6 * self.feature_dim
                grad_level = grad_fm[:, offset : offset + width]
                for pi, ((ai, aj), pcache) in enumerate(zip(PLANE_AXES, lcache["planes"])):
                    sl = grad_level[:, pi * self.feature_dim : (pi + 1) * self.feature_dim]
                    gi, gj = _interp_backward(
                        self.planes[li][pi], pcache, sl, param_grads[f"planes.{li}.{pi}"]
                    )
                    grad_coords[:, ai] += gi
                    grad_coords[:, aj] += gj
            offset += width

        grad_coords *= cache["inside"]  # clamped coordinates stop the chain
        return grad_coords[:, :3] / cache["span"]

    # -- transform decoding ----------------------------------------------------

    def predict_transform(self, features: np.ndarray):
        """Additive storage-space deltas for each attribute; with cache."""
        out = {}
        cache = {"features": features, "heads": {}}
        for name in HEAD_NAMES:
            head = self.heads[name]
            pre1 = features @ head.w1 + head.b1
            hid = np.maximum(pre1, 0.0)
            out[name] = hid @ head.w2 + head.b2
            cache["heads"][name] = {"pre1": pre1, "hid": hid}
        return out, cache

    def predict_backward(self, cache: dict, grad_out: dict, param_grads: dict):
        grad_features = np.zeros_like(cache["features"])
        for name in HEAD_NAMES:
            head = self.heads[name]
            hcache = cache["heads"][name]
            g = grad_out[name]
            param_grads[f"head.{name}.w2"] += hcache["hid"].T @ g
            param_grads[f"head.{name}.b2"] += g.sum(axis=0)
            gh = (g @ head.w2.T) * (hcache["pre1"] > 0.0)
            param_grads[f"head.{name}.w1"] += cache["features"].T @ gh
            param_grads[f"head.{name}.b1"] += gh.sum(axis=0)
            grad_features += gh @ head.w1.T
        return grad_features


def apply_transform(model: GaussianModel, deltas: dict):
    """Additive update in storage space; quaternions are re-normalized.

    Returns (transformed model, cache). Opacity and SH pass through
    untouched; the displaced model is a fresh object.
    """
    q_sum = model.rotations + deltas["rotations"]
    transformed = GaussianModel(
        positions=model.positions + deltas["positions"],
        log_scales=model.log_scales + deltas["log_scales"],
        rotations=normalize_quaternions(q_sum),
        opacities=model.opacities.copy(),
        sh=model.sh.copy(),
    )
    return transformed, {"q_sum": q_sum}


def apply_backward(cache: dict, grad_positions, grad_log_scales, grad_rotations):
    """Gradients w.r.t. both addends of each additive update.

    The rotation gradient is pulled through the re-normalization; position
    and log-scale updates are identities, so those gradients pass through.
    """
    grad_q_sum = normalize_backward(cache["q_sum"], grad_rotations)
    return grad_positions, grad_log_scales, grad_q_sum


def transform_model(field: TransformField, model: GaussianModel, ratio: float):
    """Displace every Gaussian at one keep-ratio; the field is queried at the
    untransformed positions. Returns (model', bundle) for the backward pass."""
    features, qcache = field.query_field(model.positions, ratio)
    deltas, pcache = field.predict_transform(features)
    transformed, acache = apply_transform(model, deltas)
    return transformed, {"query": qcache, "predict": pcache, "apply": acache}


def transform_backward(
    field: TransformField,
    model: GaussianModel,
    bundle: dict,
    grad_positions: np.ndarray,
    grad_log_scales: np.ndarray,
    grad_rotations: np.ndarray,
):
    """Chain transformed-attribute gradients to field parameters and inputs.

    Returns (param_grads, base_grads): parameter gradients keyed like
    `named_parameters`, and gradients w.r.t. the untransformed attributes
    including the query-position path.
    """
    gp, gs, gq = apply_backward(
        bundle["apply"], grad_positions, grad_log_scales, grad_rotations
    )
    param_grads = field.zero_gradients()
    grad_features = field.predict_backward(
        bundle["predict"],
        {"positions": gp, "log_scales": gs, "rotations": gq},
        param_grads,
    )
    grad_query_pos = field.query_backward(bundle["query"], grad_features, param_grads)
    base = {
        "positions": gp + grad_query_pos,
        "log_scales": gs,
        "rotations": gq,
    }
    return param_grads, base


# -- bilinear plane interpolation ---------------------------------------------


def _interp_forward(grid: np.ndarray, u: np.ndarray, v: np.ndarray) -> dict:
    """Aligned-corners bilinear lookup of (N,) x (N,) coords in a (Ri, Rj, F) grid."""
    ri, rj = grid.shape[0], grid.shape[1]
    fu = u * (ri - 1)
    fv = v * (rj - 1)
    i0 = np.minimum(fu.astype(np.int64), ri - 2)
    j0 = np.minimum(fv.astype(np.int64), rj - 2)
    du = fu - i0
    dv = fv - j0
    g00 = grid[i0, j0]
    g10 = grid[i0 + 1, j0]
    g01 = grid[i0, j0 + 1]
    g11 = grid[i0 + 1, j0 + 1]
    value = (
        g00 * ((1 - du) * (1 - dv))[:, None]
        + g10 * (du * (1 - dv))[:, None]
        + g01 * ((1 - du) * dv)[:, None]
        + g11 * (du * dv)[:, None]
    )
    return {
        "i0": i0, "j0": j0, "du": du, "dv": dv,
        "g00": g00, "g10": g10, "g01": g01, "g11": g11,
        "value": value,
    }


def _scatter_corner(grad_grid: np.ndarray, i, j, w, grad_feat):
    """Accumulate w[:, None] * grad_feat rows into grid cells (i, j)."""
    ri, rj, f = grad_grid.shape
    flat = (i * rj + j) * f
    idx = (flat[:, None] + np.arange(f)[None, :]).ravel()
    contrib = (w[:, None] * grad_feat).ravel()
    grad_grid.ravel()[:] += np.bincount(idx, weights=contrib, minlength=ri * rj * f)


def _interp_backward(grid, cache, grad_value, grad_grid):
    """Scatter feature gradients to the four corners; return coord grads.

    Coordinate gradients are the in-cell derivative scaled by (R - 1); they
    are exact away from cell boundaries.
    """
    ri, rj = grid.shape[0], grid.shape[1]
    i0, j0 = cache["i0"], cache["j0"]
    du, dv = cache["du"], cache["dv"]
    _scatter_corner(grad_grid, i0, j0, (1 - du) * (1 - dv), grad_value)
    _scatter_corner(grad_grid, i0 + 1, j0, du * (1 - dv), grad_value)
    _scatter_corner(grad_grid, i0, j0 + 1, (1 - du) * dv, grad_value)
    _scatter_corner(grad_grid, i0 + 1, j0 + 1, du * dv, grad_value)
    dval_du = (cache["g10"] - cache["g00"]) * (1 - dv)[:, None] + (
        cache["g11"] - cache["g01"]
    ) * dv[:, None]
    dval_dv = (cache["g01"] - cache["g00"]) * (1 - du)[:, None] + (
        cache["g11"] - cache["g10"]
    ) * du[:, None]
    gu = np.sum(grad_value * dval_du, axis=1) * (ri - 1)
    gv = np.sum(grad_value * dval_dv, axis=1) * (rj - 1)
    return gu, gv
