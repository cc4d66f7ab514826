"""Scikit-learn style facade: fit a scene once, slice it to any ratio.

Constructor parameters mirror the training config key-for-key, so
`get_params` / `set_params` / `clone` compose with scikit-learn tooling,
and fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import GaussianModel
from .errors import InvalidAttributeError
from .infer import CompactModel, compress, eval_ratios, eval_views
from .render import psnr, render_image
from .train import build_config, train


class ElasticSplat(BaseEstimator):
    """Train once, then compress, render, and score at any keep-ratio.

    `fit` accepts a scene dataset plus an initial Gaussian cloud (or any
    object carrying `.dataset` and `.init_model`, such as the synthetic
    scene factory's output). After fitting, `transform` maps ratios to
    compacted models, `predict` renders cameras, and `score` is the mean
    test-view PSNR, so higher is better.
    """

    def __init__(
        self,
        seed=0,
        background=(1.0, 1.0, 1.0),
        stage1_iterations=3000,
        stage2_iterations=5000,
        ratios=(0.01, 0.05, 0.1, 0.15),
        gi_weight=1.0,
        sparsity_weight=1.0,
        position_lr_init=0.00016,
        position_lr_final=1.6e-06,
        scale_lr=0.005,
        rotation_lr=0.001,
        opacity_lr=0.05,
        sh_lr=0.0025,
        selector_lr=0.001,
        field_lr=0.001,
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_eps=1e-15,
        tau_start=1.0,
        tau_min=0.1,
        densify_interval=200,
        densify_start=300,
        densify_stop=2000,
        clone_grad_threshold=5e-05,
        split_scale_fraction=0.02,
        prune_opacity=0.005,
        max_gaussians=100000,
        gi_refresh_interval=1000,
        gamma_mode="as_printed",
        selector_width=64,
        selector_ratio_slope=30.0,
        field_resolution=(64, 64, 64, 16),
        field_level_scales=(1, 2),
        field_feature_dim=4,
        field_hidden=64,
        field_combine="product",
        log_every=50,
    ):
        self.seed = seed
        self.background = background
        self.stage1_iterations = stage1_iterations
        self.stage2_iterations = stage2_iterations
        self.ratios = ratios
        self.gi_weight = gi_weight
        self.sparsity_weight = sparsity_weight
        self.position_lr_init = position_lr_init
        self.position_lr_final = position_lr_final
        self.scale_lr = scale_lr
        self.rotation_lr = rotation_lr
        self.opacity_lr = opacity_lr
        self.sh_lr = sh_lr
        self.selector_lr = selector_lr
        self.field_lr = field_lr
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.tau_start = tau_start
        self.tau_min = tau_min
        self.densify_interval = densify_interval
        self.densify_start = densify_start
        self.densify_stop = densify_stop
        self.clone_grad_threshold = clone_grad_threshold
        self.split_scale_fraction = split_scale_fraction
        self.prune_opacity = prune_opacity
        self.max_gaussians = max_gaussians
        self.gi_refresh_interval = gi_refresh_interval
        self.gamma_mode = gamma_mode
        self.selector_width = selector_width
        self.selector_ratio_slope = selector_ratio_slope
        self.field_resolution = field_resolution
        self.field_level_scales = field_level_scales
        self.field_feature_dim = field_feature_dim
        self.field_hidden = field_hidden
        self.field_combine = field_combine
        self.log_every = log_every

    @staticmethod
    def _unpack(X, init_model):
        dataset = getattr(X, "dataset", X)
        init = init_model if init_model is not None else getattr(X, "init_model", None)
        if init is None:
            raise InvalidAttributeError(
                "fit needs an initial model: pass init_model= or a scene "
                "object carrying one")
        return dataset, init

    def fit(self, X, y=None, init_model: GaussianModel | None = None,
            log_path=None):
        """Run both training stages on the scene in X; returns self."""
        config = build_config(self.get_params())
        dataset, init = self._unpack(X, init_model)
        self.bundle_ = train(dataset, init, config, log_path=log_path)
        self.n_gaussians_ = self.bundle_.model.n
        return self

    def transform(self, X) -> CompactModel | list[CompactModel]:
        """Ratio(s) -> compacted model(s) of exactly floor(e*N) Gaussians."""
        check_is_fitted(self, "bundle_")
        if np.isscalar(X):
            return compress(self.bundle_, X)
        return [compress(self.bundle_, ratio) for ratio in X]

    def fit_transform(self, X, y=None, **fit_params):
        ratios = fit_params.pop("transform_ratios", self.ratios)
        return self.fit(X, y, **fit_params).transform(ratios)

    def predict(self, X, ratio: float = 1.0) -> np.ndarray | list[np.ndarray]:
        """Render camera(s) at the given keep-ratio."""
        check_is_fitted(self, "bundle_")
        options = self.bundle_.config.render_options()
        model = compress(self.bundle_, ratio).model
        if hasattr(X, "world_to_camera"):
            return render_image(model, X, options=options)
        return [render_image(model, camera, options=options) for camera in X]

    def score(self, X, y=None, ratio: float = 1.0) -> float:
        """Mean PSNR over the dataset's held-out views at the given ratio."""
        check_is_fitted(self, "bundle_")
        dataset = getattr(X, "dataset", X)
        options = self.bundle_.config.render_options()
        model = compress(self.bundle_, ratio).model
        values = [
            psnr(render_image(model, dataset.cameras[i], options=options),
                 dataset.images[i])
            for i in eval_views(dataset)
        ]
        return float(np.mean(values))

    def eval_table(self, X, ratios) -> list[dict]:
        """(ratio, psnr, ssim) rows over the dataset's held-out views."""
        check_is_fitted(self, "bundle_")
        return eval_ratios(self.bundle_, getattr(X, "dataset", X), ratios)
