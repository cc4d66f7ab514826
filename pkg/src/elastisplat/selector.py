"""Learned per-Gaussian selection conditioned on the requested keep-ratio.

A small bias-free network embeds the scalar ratio and the normalized Gaussian
attributes separately, mixes them linearly into two class logits per Gaussian,
and draws binary keep/drop masks with Gumbel-softmax straight-through
sampling. Because the ratio embedding shifts every Gaussian's logits equally,
the induced ranking is ratio-independent and top-k selections nest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianModel, normalize_backward, normalize_quaternions
from .errors import InvalidAttributeError
from .validation import check_ratio, floor_count

ATTR_DIM = 10  # position (3) + activated scale (3) + unit quaternion (4)
_GUMBEL_STREAM = 0x67756D62  # fixed Philox key tag for mask noise


@dataclass
class TemperatureSchedule:
    """Exponentially decaying softmax temperature with a hard floor."""

    tau0: float = 1.0
    tau_min: float = 0.1
    decay: float = 0.9995

    def at(self, iteration: int) -> float:
        return max(self.tau_min, self.tau0 * self.decay**iteration)

    @staticmethod
    def for_horizon(iterations: int, tau0: float = 1.0, tau_min: float = 0.1):
        """Schedule whose decay reaches tau_min exactly at `iterations`."""
        if iterations <= 0:
            raise InvalidAttributeError("schedule horizon must be positive")
        return TemperatureSchedule(tau0, tau_min, (tau_min / tau0) ** (1.0 / iterations))


def temperature_step(schedule: TemperatureSchedule, iteration: int) -> float:
    """Temperature used at a given training step."""
    return schedule.at(iteration)


@dataclass
class SelectorGradients:
    w1e: np.ndarray
    w2e: np.ndarray
    w1a: np.ndarray
    w2a: np.ndarray
    w_mix: np.ndarray

    def __iadd__(self, other: "SelectorGradients"):
        self.w1e += other.w1e
        self.w2e += other.w2e
        self.w1a += other.w1a
        self.w2a += other.w2a
        self.w_mix += other.w_mix
        return self

    def as_dict(self) -> dict:
        return {
            "w1e": self.w1e,
            "w2e": self.w2e,
            "w1a": self.w1a,
            "w2a": self.w2a,
            "w_mix": self.w_mix,
        }


@dataclass
class SelectorState:
    """Forward intermediates needed to run the selector backward."""

    ratio: float
    e_pre1: np.ndarray
    e_hidden1: np.ndarray
    e_pre2: np.ndarray
    e_embed: np.ndarray
    xi: np.ndarray
    a_pre1: np.ndarray
    a_hidden1: np.ndarray
    a_pre2: np.ndarray
    a_embed: np.ndarray
    scales: np.ndarray
    logits: np.ndarray


@dataclass
class SelectorNet:
    """Bias-free two-branch ratio/attribute network with a linear mixing head.

    Weights: `w1e` (D,) and `w2e` (D, D) embed the scalar ratio; `w1a`
    (10, D) and `w2a` (D, D) embed attributes; `w_mix` (2D, 2) produces the
    drop/keep logits. Positions are normalized into [-1, 1] by the stored
    scene bounding box, scales enter activated, quaternions unit-length.
    """

    w1e: np.ndarray
    w2e: np.ndarray
    w1a: np.ndarray
    w2a: np.ndarray
    w_mix: np.ndarray
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray

    def named_parameters(self):
        """Flat (name, array) view used by the optimizer and checkpoints."""
        return [
            ("w1e", self.w1e),
            ("w2e", self.w2e),
            ("w1a", self.w1a),
            ("w2a", self.w2a),
            ("w_mix", self.w_mix),
        ]

    @property
    def width(self) -> int:
        return self.w1e.shape[0]

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        model: GaussianModel,
        width: int = 64,
        target_logit: float = 2.0,
        ratio_ref: float = 0.0775,
        ratio_slope: float = 30.0,
    ) -> "SelectorNet":
        """Fan-in-scaled embeddings with a calibrated mixing head.

        At `ratio_ref` the keep logit averages `target_logit` (mostly
        selected) and grows by `ratio_slope` per unit of e. The ratio branch
        is positively homogeneous (h_e(e) = e * h_e(1)), so without a
        pre-seeded slope the selected count barely responds to e and
        training settles at one ratio-independent fraction.
        """
        d = width
        net = cls(
            w1e=rng.uniform(-1.0, 1.0, size=d),
            w2e=rng.uniform(-1.0, 1.0, size=(d, d)) / np.sqrt(d),
            w1a=rng.uniform(-1.0, 1.0, size=(ATTR_DIM, d)) / np.sqrt(ATTR_DIM),
            w2a=rng.uniform(-1.0, 1.0, size=(d, d)) / np.sqrt(d),
            w_mix=np.zeros((2 * d, 2)),
            bbox_lo=model.bounding_box()[0],
            bbox_hi=model.bounding_box()[1],
        )
        ratio_dir = net._embed_ratio(1.0)[3]
        _, state = net.forward(model, ratio_ref)
        attr_mean = state.a_embed.mean(axis=0)
        base = target_logit - ratio_slope * ratio_ref
        e_norm = float(ratio_dir @ ratio_dir)
        if e_norm > 1e-12:
            net.w_mix[:d, 1] = ratio_slope * ratio_dir / e_norm
        a_norm = float(attr_mean @ attr_mean)
        if a_norm > 1e-12:
            net.w_mix[d:, 1] = base * attr_mean / a_norm
        else:
            net.w_mix[d:, 1] = base / d
        return net

    def _embed_ratio(self, ratio: float):
        pre1 = ratio * self.w1e
        hid1 = np.maximum(pre1, 0.0)
        pre2 = hid1 @ self.w2e
        return pre1, hid1, pre2, np.maximum(pre2, 0.0)

    def attribute_inputs(self, model: GaussianModel):
        """Normalized network inputs xi = (position, scale, quaternion)."""
        span = self.bbox_hi - self.bbox_lo
        x_norm = 2.0 * (model.positions - self.bbox_lo) / span - 1.0
        scales = model.scales()
        q_unit = normalize_quaternions(model.rotations)
        return np.concatenate([x_norm, scales, q_unit], axis=1), scales

    def forward(self, model: GaussianModel, ratio: float):
        """Per-Gaussian logits (N, 2) at one keep-ratio, plus backward state."""
        ratio = check_ratio(ratio)
        e_pre1, e_hid1, e_pre2, e_embed = self._embed_ratio(ratio)
        xi, scales = self.attribute_inputs(model)
        a_pre1 = xi @ self.w1a
        a_hid1 = np.maximum(a_pre1, 0.0)
        a_pre2 = a_hid1 @ self.w2a
        a_embed = np.maximum(a_pre2, 0.0)
        logits = e_embed @ self.w_mix[: self.width] + a_embed @ self.w_mix[self.width :]
        state = SelectorState(
            ratio, e_pre1, e_hid1, e_pre2, e_embed,
            xi, a_pre1, a_hid1, a_pre2, a_embed, scales, logits,
        )
        return logits, state

    def backward(self, model: GaussianModel, state: SelectorState, grad_logits: np.ndarray):
        """Weight gradients plus the chain into the Gaussian attributes.

        Returns (SelectorGradients, dict with positions/log_scales/rotations).
        """
        d = self.width
        grad_sum = grad_logits.sum(axis=0)
        grad_mix = np.empty_like(self.w_mix)
        grad_mix[:d] = np.outer(state.e_embed, grad_sum)
        grad_mix[d:] = state.a_embed.T @ grad_logits

        grad_he = self.w_mix[:d] @ grad_sum
        g2 = grad_he * (state.e_pre2 > 0.0)
        grad_w2e = np.outer(state.e_hidden1, g2)
        g1 = (self.w2e @ g2) * (state.e_pre1 > 0.0)
        grad_w1e = g1 * state.ratio

        grad_ha = grad_logits @ self.w_mix[d:].T
        a2 = grad_ha * (state.a_pre2 > 0.0)
        grad_w2a = state.a_hidden1.T @ a2
        a1 = (a2 @ self.w2a.T) * (state.a_pre1 > 0.0)
        grad_w1a = state.xi.T @ a1
        grad_xi = a1 @ self.w1a.T

        span = self.bbox_hi - self.bbox_lo
        grads = {
            "positions": grad_xi[:, :3] * (2.0 / span),
            "log_scales": grad_xi[:, 3:6] * state.scales,
            "rotations": normalize_backward(model.rotations, grad_xi[:, 6:10]),
        }
        return SelectorGradients(grad_w1e, grad_w2e, grad_w1a, grad_w2a, grad_mix), grads


def gumbel_noise(seed: int, iteration: int, n: int) -> np.ndarray:
    """Counter-based Gumbel(0, 1) draws, reproducible per (seed, iteration).

    The stream is keyed, not stateful, so replaying a step (or resuming a
    run) regenerates identical noise regardless of call order.
    """
    bits = np.random.Philox(
        counter=[iteration, 0, 0, 0],
        key=np.array([seed & 0xFFFFFFFFFFFFFFFF, _GUMBEL_STREAM], dtype=np.uint64),
    )
    u = np.random.Generator(bits).random((n, 2))
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def softmax_rows(y: np.ndarray) -> np.ndarray:
    shifted = y - y.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def sample_mask(logits: np.ndarray, tau: float, noise: np.ndarray | None = None,
                hard: bool = True):
    """Keep-mask from perturbed logits: hard forward, soft probabilities kept.

    With `hard`, the mask is the one-hot argmax of (logits + noise) / tau and
    gradients must be routed through `mask_gradient` evaluated at the soft
    probabilities (straight-through). With hard=False the soft keep
    probability itself is returned, which is what finite-difference checks
    differentiate. Returns (mask, soft) where soft is (N, 2).
    """
    if tau <= 0.0:
        raise InvalidAttributeError(f"temperature must be positive, got {tau}")
    y = logits if noise is None else logits + noise
    soft = softmax_rows(y / tau)
    if hard:
        mask = (soft[:, 1] > soft[:, 0]).astype(np.float64)
    else:
        mask = soft[:, 1].copy()
    return mask, soft


def mask_gradient(soft: np.ndarray, tau: float) -> np.ndarray:
    """Closed-form rows of d(keep probability) / d(logits).

    For two classes with soft probabilities (B0, B1) at temperature tau the
    keep column differentiates to (-B0 B1 / tau, B1 (1 - B1) / tau); the
    straight-through estimator applies the same rows to the hard mask.
    """
    b0 = soft[:, 0]
    b1 = soft[:, 1]
    return np.stack([-b0 * b1 / tau, b1 * (1.0 - b1) / tau], axis=1)


def select_topk_inference(logits: np.ndarray, ratio: float, tau: float):
    """Deterministic keep set: top floor(e*N) by soft keep probability.

    No noise is injected; ties rank the lower index first. The ordering is
    computed on the raw keep margin, whose sigmoid at any temperature is
    the soft keep probability: same ranking, but immune to the artificial
    ties that sigmoid saturation creates for confidently-kept rows. Returns
    (mask, indices) with indices ascending.
    """
    ratio = check_ratio(ratio)
    if tau <= 0.0:
        raise InvalidAttributeError(f"temperature must be positive, got {tau}")
    n = logits.shape[0]
    order = np.argsort(logits[:, 0] - logits[:, 1], kind="stable")
    k = floor_count(ratio, n)
    chosen = np.sort(order[:k])
    mask = np.zeros(n)
    mask[chosen] = 1.0
    return mask, chosen
