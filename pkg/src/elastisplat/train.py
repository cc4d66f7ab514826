"""Two-stage optimization: fit the base model, then the elastic machinery.

Stage 1 is plain photometric fitting with clone/split densification. Stage 2
freezes nothing: each step samples a keep-ratio and a view, renders the
masked-and-displaced model next to the full one, and trains the Gaussians,
the selector, and the transform field jointly against the photometric,
importance-guidance, and sparsity terms.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import GaussianModel
from .errors import (
    ConfigError,
    FormatError,
    InvalidAttributeError,
    InvalidRatioError,
    StaleImportanceError,
)
from .field import HEAD_NAMES, MlpHead, TransformField, transform_backward, transform_model
from .importance import ImportanceTable, compute_gi, guidance_mask
from .io import (
    SceneDataset,
    load_checkpoint,
    model_from_arrays,
    model_to_arrays,
    save_checkpoint,
)
from .render import RenderOptions, psnr, render_backward, render_forward
from .selector import (
    SelectorGradients,
    SelectorNet,
    TemperatureSchedule,
    gumbel_noise,
    mask_gradient,
    sample_mask,
)
from .validation import check_ratio

# Counter-based stream tags: every random decision is a pure function of
# (seed, stream, iteration), so identical configs replay identical runs.
STREAM_VIEW = 0x76696577
STREAM_RATIO = 0x7261746F
STREAM_DENSIFY = 0x64656E73


def stream_rng(seed: int, stream: int, iteration: int) -> np.random.Generator:
    bits = np.random.Philox(counter=[iteration, 0, 0, 0], key=[seed, stream])
    return np.random.Generator(bits)


@dataclass
class TrainConfig:
    """Every knob of both stages; flat so the CLI can expose all of it."""

    seed: int = 0
    background: tuple = (1.0, 1.0, 1.0)
    stage1_iterations: int = 3000
    stage2_iterations: int = 5000
    ratios: tuple = (0.01, 0.05, 0.10, 0.15)
    gi_weight: float = 1.0
    sparsity_weight: float = 1.0
    position_lr_init: float = 1.6e-4
    position_lr_final: float = 1.6e-6
    scale_lr: float = 5e-3
    rotation_lr: float = 1e-3
    opacity_lr: float = 5e-2
    sh_lr: float = 2.5e-3
    selector_lr: float = 1e-3
    field_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    tau_start: float = 1.0
    tau_min: float = 0.1
    densify_interval: int = 200
    densify_start: int = 300
    densify_stop: int = 2000
    clone_grad_threshold: float = 5e-5
    split_scale_fraction: float = 0.02
    prune_opacity: float = 0.005
    max_gaussians: int = 100_000
    gi_refresh_interval: int = 1000
    gamma_mode: str = "as_printed"
    selector_width: int = 64
    selector_ratio_slope: float = 30.0
    field_resolution: tuple = (64, 64, 64, 16)
    field_level_scales: tuple = (1, 2)
    field_feature_dim: int = 4
    field_hidden: int = 64
    field_combine: str = "product"
    log_every: int = 50

    def total_iterations(self) -> int:
        return self.stage1_iterations + self.stage2_iterations

    def render_options(self) -> RenderOptions:
        return RenderOptions(background=tuple(self.background))


# -- configuration -----------------------------------------------------------------


def _coerce(value, default, path: str):
    """Convert a raw config value to the type of the default it replaces."""
    if isinstance(default, bool):
        raise ConfigError("boolean keys are not supported", field=path)
    if isinstance(default, int):
        if isinstance(value, bool):
            raise ConfigError(f"expected int, got {value!r}", field=path)
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
        raise ConfigError(f"expected int, got {value!r}", field=path)
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"expected float, got {value!r}", field=path)
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"expected float, got {value!r}", field=path)
    if isinstance(default, tuple):
        element = default[0]
        if isinstance(value, str):
            value = [part for part in value.split(",") if part.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a comma list, got {value!r}", field=path)
        return tuple(_coerce(item, element, path) for item in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected string, got {value!r}", field=path)
        return value
    raise ConfigError(f"unsupported key type {type(default).__name__}", field=path)


def build_config(overrides: dict) -> TrainConfig:
    """TrainConfig from override values, validating each against its key."""
    defaults = TrainConfig()
    valid = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(TrainConfig)}
    clean = {}
    for key, value in overrides.items():
        if key not in valid:
            raise ConfigError("unknown key", field=f"config.{key}")
        clean[key] = _coerce(value, valid[key], f"config.{key}")
    config = TrainConfig(**clean)

    for name in ("stage1_iterations", "stage2_iterations"):
        if getattr(config, name) < 0:
            raise ConfigError("must be non-negative", field=f"config.{name}")
    for name in ("tau_start", "tau_min"):
        if getattr(config, name) <= 0:
            raise ConfigError("must be positive", field=f"config.{name}")
    for i, ratio in enumerate(config.ratios):
        try:
            check_ratio(ratio)
        except InvalidRatioError as exc:
            raise ConfigError(str(exc), field=f"config.ratios[{i}]") from exc
    if config.gamma_mode not in ("as_printed", "clamped01"):
        raise ConfigError(
            f"must be 'as_printed' or 'clamped01', got {config.gamma_mode!r}",
            field="config.gamma_mode",
        )
    if config.field_combine not in ("product", "concat"):
        raise ConfigError(
            f"must be 'product' or 'concat', got {config.field_combine!r}",
            field="config.field_combine",
        )
    return config


class Adam:
    """Per-name Adam with moments that survive point-count changes."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        """Update `param` in place."""
        if name not in self.state:
            self.state[name] = [np.zeros_like(param), np.zeros_like(param), 0]
        m, v, t = self.state[name]
        t += 1
        m += (1.0 - self.beta1) * (grad - m)
        v += (1.0 - self.beta2) * (grad * grad - v)
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.state[name][2] = t

    def remap_rows(self, name: str, keep: np.ndarray, n_new: int) -> None:
        """Keep moment rows for surviving points; new points start at zero."""
        if name not in self.state:
            return
        m, v, t = self.state[name]
        pad = [(0, n_new)] + [(0, 0)] * (m.ndim - 1)
        self.state[name] = [np.pad(m[keep], pad), np.pad(v[keep], pad), t]


def position_lr(config: TrainConfig, iteration: int, extent: float) -> float:
    """Log-linear decay from init to final over the whole run, scene-scaled."""
    steps = max(config.total_iterations(), 1)
    p = min(max(iteration / steps, 0.0), 1.0)
    return extent * math.exp(
        (1.0 - p) * math.log(config.position_lr_init) + p * math.log(config.position_lr_final)
    )


def scene_extent(cameras) -> float:
    centers = np.stack([cam.center for cam in cameras])
    centroid = centers.mean(axis=0)
    return float(np.linalg.norm(centers - centroid, axis=1).max()) * 1.1


@dataclass
class LossReport:
    """One training step's objective, split by term."""

    total: float
    render_selected: float
    render_full: float
    guidance: float
    sparsity: float


def l1_loss_grad(image: np.ndarray, target: np.ndarray):
    """Mean absolute error and its (sub)gradient w.r.t. the image."""
    diff = image - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


class MetricsLog:
    """In-memory metric rows, optionally mirrored to a JSONL file."""

    def __init__(self, path=None):
        self.rows: list = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is not None:
            with self.path.open("a") as sink:
                sink.write(json.dumps(row) + "\n")


def ensure_fresh_importance(table: ImportanceTable, step: int, interval: int) -> None:
    """Guidance must come from scores at most one refresh interval old."""
    age = step - table.iteration
    if age < 0 or age >= 2 * interval:
        raise StaleImportanceError(
            f"importance table from step {table.iteration} consumed at step {step} "
            f"with refresh interval {interval}"
        )


# -- stage 1: photometric fitting ------------------------------------------------


def model_lrs(config: TrainConfig, iteration: int, extent: float) -> dict:
    return {
        "model.positions": position_lr(config, iteration, extent),
        "model.log_scales": config.scale_lr,
        "model.rotations": config.rotation_lr,
        "model.opacities": config.opacity_lr,
        "model.sh": config.sh_lr,
    }


def apply_model_step(
    model: GaussianModel, grads, adam: Adam, lrs: dict
) -> None:
    adam.step("model.positions", model.positions, grads.positions, lrs["model.positions"])
    adam.step("model.log_scales", model.log_scales, grads.log_scales, lrs["model.log_scales"])
    adam.step("model.rotations", model.rotations, grads.rotations, lrs["model.rotations"])
    adam.step("model.opacities", model.opacities, grads.opacities, lrs["model.opacities"])
    adam.step("model.sh", model.sh, grads.sh, lrs["model.sh"])
    model.renormalize_rotations()
    model.bump_version()


def densify_and_prune(
    model: GaussianModel,
    adam: Adam,
    grad_accum: np.ndarray,
    grad_count: np.ndarray,
    config: TrainConfig,
    extent: float,
    iteration: int,
) -> GaussianModel:
    """Clone small high-gradient points, split large ones, drop transparent ones."""
    mean_grad = grad_accum / np.maximum(grad_count, 1)
    keep = model.opacity() >= config.prune_opacity
    hot = (mean_grad > config.clone_grad_threshold) & keep
    big = model.scales().max(axis=1) > config.split_scale_fraction * extent
    room = max(config.max_gaussians - int(keep.sum()), 0)
    grow = np.flatnonzero(hot)
    if grow.size > room:
        order = np.argsort(-mean_grad[grow], kind="stable")
        grow = grow[order[:room]]

    rng = stream_rng(config.seed, STREAM_DENSIFY, iteration)
    children = []
    for idx in grow:
        child = {
            "positions": model.positions[idx].copy(),
            "log_scales": model.log_scales[idx].copy(),
            "rotations": model.rotations[idx].copy(),
            "opacities": model.opacities[idx],
            "sh": model.sh[idx].copy(),
        }
        if big[idx]:
            # Split: sample the offspring inside the parent and shrink both.
            child["positions"] += rng.normal(0.0, 1.0, 3) * model.scales()[idx]
            child["log_scales"] -= math.log(1.6)
            model.log_scales[idx] -= math.log(1.6)
        else:
            child["positions"] += rng.normal(0.0, 0.01 * extent, 3)
        children.append(child)

    keep_idx = np.flatnonzero(keep)
    n_new = len(children)
    stack = lambda key, tail: (
        np.concatenate([getattr(model, key)[keep_idx]] + tail) if tail
        else getattr(model, key)[keep_idx]
    )
    new_model = GaussianModel(
        positions=stack("positions", [np.stack([c["positions"] for c in children])] if children else []),
        log_scales=stack("log_scales", [np.stack([c["log_scales"] for c in children])] if children else []),
        rotations=stack("rotations", [np.stack([c["rotations"] for c in children])] if children else []),
        opacities=stack("opacities", [np.array([c["opacities"] for c in children])] if children else []),
        sh=stack("sh", [np.stack([c["sh"] for c in children])] if children else []),
        version=model.version + 1,
    )
    for name in ("positions", "log_scales", "rotations", "opacities", "sh"):
        adam.remap_rows(f"model.{name}", keep_idx, n_new)
    return new_model


def stage1_fit(
    model: GaussianModel,
    dataset: SceneDataset,
    config: TrainConfig,
    adam: Adam,
    log: MetricsLog,
    extent: float,
) -> GaussianModel:
    options = config.render_options()
    train_idx = dataset.train_indices()
    grad_accum = np.zeros(model.n)
    grad_count = np.zeros(model.n)
    for it in range(config.stage1_iterations):
        view = int(train_idx[stream_rng(config.seed, STREAM_VIEW, it).integers(len(train_idx))])
        camera, target = dataset.view(view)
        graph = render_forward(model, camera, options=options)
        loss, grad_image = l1_loss_grad(graph.image, target)
        grads = render_backward(graph, model, grad_image)

        norms = np.linalg.norm(grads.positions, axis=1)
        grad_accum += norms
        grad_count += norms > 0

        apply_model_step(model, grads, adam, model_lrs(config, it, extent))

        if (
            config.densify_start <= it < config.densify_stop
            and (it - config.densify_start) % config.densify_interval == 0
        ):
            model = densify_and_prune(
                model, adam, grad_accum, grad_count, config, extent, it
            )
            grad_accum = np.zeros(model.n)
            grad_count = np.zeros(model.n)

        if it % config.log_every == 0 or it == config.stage1_iterations - 1:
            log.append(
                {
                    "stage": 1,
                    "step": it,
                    "loss": loss,
                    "psnr": psnr(graph.image, target),
                    "n_gaussians": model.n,
                    "view": view,
                }
            )
    return model


# -- stage 2: joint elastic training ----------------------------------------------


@dataclass
class Stage2State:
    """Everything stage 2 threads between steps."""

    model: GaussianModel
    selector: SelectorNet
    field: TransformField
    gi_table: ImportanceTable
    schedule: TemperatureSchedule
    selected_fraction: list = field(default_factory=list)


@dataclass
class StepGradients:
    """One joint step's losses and every exact gradient it produced."""

    report: LossReport
    model: dict
    selector: SelectorGradients
    field: dict
    mask: np.ndarray
    logits: np.ndarray


def elastic_step_gradients(
    model: GaussianModel,
    selector: SelectorNet,
    fld: TransformField,
    camera,
    target: np.ndarray,
    guide: np.ndarray,
    ratio: float,
    tau: float,
    noise: np.ndarray | None,
    config: TrainConfig,
    options: RenderOptions | None = None,
    hard: bool = True,
) -> StepGradients:
    """Loss and exact gradients of one joint step at a fixed (ratio, view).

    With `hard` the mask is the straight-through sample; with hard=False the
    soft keep probability gates the render directly, making the whole chain
    differentiable for gradient checks. `StepGradients.logits` carries the
    loss gradient at the selection logits (the straight-through chain).
    """
    options = options or config.render_options()
    logits, sel_state = selector.forward(model, ratio)
    mask, soft = sample_mask(logits, tau, noise, hard=hard)

    moved, bundle = transform_model(fld, model, ratio)
    graph_s = render_forward(moved, camera, mask, options)
    graph_f = render_forward(model, camera, options=options)

    loss_s, grad_image_s = l1_loss_grad(graph_s.image, target)
    loss_f, grad_image_f = l1_loss_grad(graph_f.image, target)
    loss_gi = float(np.abs(mask - guide).mean())
    frac = float(mask.mean())
    loss_spar = abs(ratio - frac)
    report = LossReport(
        total=loss_s + loss_f + config.gi_weight * loss_gi + config.sparsity_weight * loss_spar,
        render_selected=loss_s,
        render_full=loss_f,
        guidance=loss_gi,
        sparsity=loss_spar,
    )

    rg_s = render_backward(graph_s, moved, grad_image_s)
    rg_f = render_backward(graph_f, model, grad_image_f)

    # Straight-through estimator: the hard mask's gradient uses the soft
    # sample's Jacobian. The guidance and sparsity terms enter here as well.
    grad_mask = (
        rg_s.mask
        + config.gi_weight * np.sign(mask - guide) / model.n
        - config.sparsity_weight * np.sign(ratio - frac) / model.n
    )
    grad_logits = grad_mask[:, None] * mask_gradient(soft, tau)
    sel_grads, sel_base = selector.backward(model, sel_state, grad_logits)
    field_grads, field_base = transform_backward(
        fld, model, bundle, rg_s.positions, rg_s.log_scales, rg_s.rotations
    )
    model_grads = {
        "positions": rg_f.positions + field_base["positions"] + sel_base["positions"],
        "log_scales": rg_f.log_scales + field_base["log_scales"] + sel_base["log_scales"],
        "rotations": rg_f.rotations + field_base["rotations"] + sel_base["rotations"],
        "opacities": rg_f.opacities + rg_s.opacities,
        "sh": rg_f.sh + rg_s.sh,
    }
    return StepGradients(report=report, model=model_grads, selector=sel_grads,
                         field=field_grads, mask=mask, logits=grad_logits)


def stage2_step(
    state: Stage2State,
    dataset: SceneDataset,
    config: TrainConfig,
    adam: Adam,
    it: int,
    extent: float,
) -> LossReport:
    """One joint step at a sampled (ratio, view); updates every group in place."""
    model, selector, fld = state.model, state.selector, state.field
    global_step = config.stage1_iterations + it

    if it % config.gi_refresh_interval == 0:
        state.gi_table = compute_gi(
            model, dataset.cameras, config.gamma_mode, iteration=global_step
        )
    ensure_fresh_importance(state.gi_table, global_step, config.gi_refresh_interval)

    ratios = tuple(config.ratios)
    ratio = ratios[int(stream_rng(config.seed, STREAM_RATIO, it).integers(len(ratios)))]
    train_idx = dataset.train_indices()
    view = int(
        train_idx[stream_rng(config.seed, STREAM_VIEW, global_step).integers(len(train_idx))]
    )
    camera, target = dataset.view(view)
    tau = state.schedule.at(it)
    guide = guidance_mask(state.gi_table, ratio)
    noise = gumbel_noise(config.seed, it, model.n)

    step = elastic_step_gradients(
        model, selector, fld, camera, target, guide, ratio, tau, noise, config
    )

    lrs = model_lrs(config, global_step, extent)
    for name, grad in step.model.items():
        adam.step(f"model.{name}", getattr(model, name), grad, lrs[f"model.{name}"])
    for name, grad in step.selector.as_dict().items():
        adam.step(f"selector.{name}", getattr(selector, name), grad, config.selector_lr)
    params = dict(fld.named_parameters())
    for name, grad in step.field.items():
        adam.step(f"field.{name}", params[name], grad, config.field_lr)

    model.renormalize_rotations()
    model.bump_version()
    state.selected_fraction.append((ratio, float(step.mask.mean())))
    return step.report


def stage2_fit(
    state: Stage2State,
    dataset: SceneDataset,
    config: TrainConfig,
    adam: Adam,
    log: MetricsLog,
    extent: float,
    start_iteration: int = 0,
    end_iteration: int | None = None,
) -> None:
    if end_iteration is None:
        end_iteration = config.stage2_iterations
    for it in range(start_iteration, end_iteration):
        report = stage2_step(state, dataset, config, adam, it, extent)
        if it % config.log_every == 0 or it == config.stage2_iterations - 1:
            ratio, frac = state.selected_fraction[-1]
            log.append(
                {
                    "stage": 2,
                    "step": it,
                    "loss": report.total,
                    "render_selected": report.render_selected,
                    "render_full": report.render_full,
                    "guidance": report.guidance,
                    "sparsity": report.sparsity,
                    "ratio": ratio,
                    "selected_fraction": frac,
                    "tau": state.schedule.at(it),
                    "n_gaussians": state.model.n,
                }
            )


# -- orchestration ------------------------------------------------------------------


@dataclass
class TrainedBundle:
    """Everything inference needs, as produced by `train`.

    `iteration` counts completed stage-2 steps; `adam`, when present, carries
    the optimizer moments so a resumed run continues bit-identically.
    `selected_fraction` records one (ratio, kept fraction) pair per stage-2
    step, the convergence trace of the sparsity term.
    """

    model: GaussianModel
    selector: SelectorNet
    field: TransformField
    gi_table: ImportanceTable
    config: TrainConfig
    metrics: MetricsLog
    iteration: int = 0
    adam: Adam | None = None
    selected_fraction: list = field(default_factory=list)


def _stage2_schedule(config: TrainConfig) -> TemperatureSchedule:
    return TemperatureSchedule.for_horizon(
        max(config.stage2_iterations, 1), config.tau_start, config.tau_min
    )


def train(
    dataset: SceneDataset,
    init_model: GaussianModel | None = None,
    config: TrainConfig = TrainConfig(),
    log_path=None,
    resume: TrainedBundle | None = None,
    stop_after: int | None = None,
) -> TrainedBundle:
    """Run both stages on one scene and return the deployable bundle.

    With `resume`, stage 1 is skipped and stage 2 continues from the bundle's
    iteration counter under the bundle's stored configuration. `stop_after`
    halts stage 2 early at that iteration so the run can be resumed later;
    the temperature horizon stays the configured one either way.
    """
    if len(dataset) == 0:
        raise InvalidAttributeError("dataset holds no views")
    log = MetricsLog(log_path)
    extent = scene_extent(dataset.cameras)
    end = stop_after

    if resume is not None:
        config = resume.config
        adam = resume.adam or Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)
        state = Stage2State(
            model=resume.model,
            selector=resume.selector,
            field=resume.field,
            gi_table=resume.gi_table,
            schedule=_stage2_schedule(config),
            selected_fraction=list(resume.selected_fraction),
        )
        stage2_fit(state, dataset, config, adam, log, extent,
                   start_iteration=resume.iteration, end_iteration=end)
    else:
        if init_model is None:
            raise InvalidAttributeError("a fresh run needs an initial model")
        adam = Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)
        model = stage1_fit(init_model.copy(), dataset, config, adam, log, extent)

        rng = np.random.default_rng(config.seed)
        selector = SelectorNet.initialize(
            rng, model, width=config.selector_width,
            ratio_slope=config.selector_ratio_slope,
        )
        fld = TransformField.initialize(
            rng,
            model,
            base_resolution=tuple(config.field_resolution),
            level_scales=tuple(config.field_level_scales),
            feature_dim=config.field_feature_dim,
            hidden=config.field_hidden,
            combine=config.field_combine,
        )
        gi_table = compute_gi(
            model, dataset.cameras, config.gamma_mode, iteration=config.stage1_iterations
        )
        state = Stage2State(
            model=model, selector=selector, field=fld, gi_table=gi_table,
            schedule=_stage2_schedule(config),
        )
        stage2_fit(state, dataset, config, adam, log, extent, end_iteration=end)

    done = config.stage2_iterations if stop_after is None else min(
        stop_after, config.stage2_iterations
    )
    return TrainedBundle(
        model=state.model,
        selector=state.selector,
        field=state.field,
        gi_table=state.gi_table,
        config=config,
        metrics=log,
        iteration=max(done, resume.iteration if resume is not None else 0),
        adam=adam,
        selected_fraction=state.selected_fraction,
    )


# -- persistence ---------------------------------------------------------------------


def bundle_to_arrays(bundle: TrainedBundle) -> tuple[dict, dict]:
    arrays = model_to_arrays(bundle.model)
    for name, arr in bundle.selector.named_parameters():
        arrays[f"selector.{name}"] = arr
    arrays["selector.bbox_lo"] = bundle.selector.bbox_lo
    arrays["selector.bbox_hi"] = bundle.selector.bbox_hi
    for name, arr in bundle.field.named_parameters():
        arrays[f"field.{name}"] = arr
    arrays["field.bbox_lo"] = bundle.field.bbox_lo
    arrays["field.bbox_hi"] = bundle.field.bbox_hi
    arrays["gi.scores"] = bundle.gi_table.scores
    arrays["gi.gamma"] = bundle.gi_table.gamma
    arrays["gi.ranking"] = bundle.gi_table.ranking
    arrays["trainer.selected_fraction"] = np.asarray(
        bundle.selected_fraction, dtype=np.float64).reshape(-1, 2)
    meta = {
        "kind": "trainer",
        "iteration": bundle.iteration,
        "config": dataclasses.asdict(bundle.config),
        "gi_iteration": bundle.gi_table.iteration,
        "gi_views": bundle.gi_table.n_views,
        "field": {
            "base_resolution": list(bundle.field.base_resolution),
            "level_scales": list(bundle.field.level_scales),
            "feature_dim": bundle.field.feature_dim,
            "combine": bundle.field.combine,
        },
    }
    if bundle.adam is not None:
        steps = {}
        for name, (m, v, t) in bundle.adam.state.items():
            arrays[f"adam.{name}.m"] = m
            arrays[f"adam.{name}.v"] = v
            steps[name] = t
        meta["adam_steps"] = steps
    return arrays, meta


def save_bundle(path, bundle: TrainedBundle) -> None:
    arrays, meta = bundle_to_arrays(bundle)
    save_checkpoint(path, arrays, meta)


def bundle_from_arrays(arrays: dict, meta: dict) -> TrainedBundle:
    model = model_from_arrays(arrays)
    selector = SelectorNet(
        w1e=arrays["selector.w1e"],
        w2e=arrays["selector.w2e"],
        w1a=arrays["selector.w1a"],
        w2a=arrays["selector.w2a"],
        w_mix=arrays["selector.w_mix"],
        bbox_lo=arrays["selector.bbox_lo"],
        bbox_hi=arrays["selector.bbox_hi"],
    )
    spec = meta["field"]
    levels = []
    for li in range(len(spec["level_scales"])):
        levels.append([arrays[f"field.planes.{li}.{pi}"] for pi in range(6)])
    fld = TransformField(
        planes=levels,
        fuse_w=arrays["field.fuse.w"],
        fuse_b=arrays["field.fuse.b"],
        heads={},
        bbox_lo=arrays["field.bbox_lo"],
        bbox_hi=arrays["field.bbox_hi"],
        base_resolution=tuple(spec["base_resolution"]),
        level_scales=tuple(spec["level_scales"]),
        feature_dim=int(spec["feature_dim"]),
        combine=str(spec["combine"]),
    )
    for name in HEAD_NAMES:
        fld.heads[name] = MlpHead(
            w1=arrays[f"field.head.{name}.w1"],
            b1=arrays[f"field.head.{name}.b1"],
            w2=arrays[f"field.head.{name}.w2"],
            b2=arrays[f"field.head.{name}.b2"],
        )
    gi = ImportanceTable(
        scores=arrays["gi.scores"],
        gamma=arrays["gi.gamma"],
        iteration=int(meta["gi_iteration"]),
        n_views=int(meta["gi_views"]),
        ranking=arrays["gi.ranking"],
    )
    config = TrainConfig(**{
        key: tuple(value) if isinstance(value, list) else value
        for key, value in meta["config"].items()
    })
    adam = None
    if "adam_steps" in meta:
        adam = Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)
        for name, t in meta["adam_steps"].items():
            adam.state[name] = [arrays[f"adam.{name}.m"], arrays[f"adam.{name}.v"], int(t)]
    fractions = arrays.get("trainer.selected_fraction",
                           np.empty((0, 2), dtype=np.float64))
    return TrainedBundle(
        model=model, selector=selector, field=fld, gi_table=gi, config=config,
        metrics=MetricsLog(), iteration=int(meta.get("iteration", 0)), adam=adam,
        selected_fraction=[(float(r), float(f)) for r, f in fractions],
    )


def load_bundle(path) -> TrainedBundle:
    arrays, meta, _ = load_checkpoint(path)
    if meta.get("kind") != "trainer":
        raise FormatError(f"checkpoint holds {meta.get('kind')!r}, expected trainer")
    return bundle_from_arrays(arrays, meta)
