"""Elastic Gaussian splatting: train once, render at any keep-ratio."""

from .core import Camera, GaussianModel, look_at_camera
from .errors import (
    ChecksumError,
    ConfigError,
    ElastisplatError,
    FormatError,
    InvalidAttributeError,
    InvalidRatioError,
    StaleGraphError,
    StaleImportanceError,
    VersionError,
)
from .estimator import ElasticSplat
from .field import TransformField, transform_model
from .importance import ImportanceTable, compute_gi, guidance_mask
from .infer import CompactModel, compress, eval_ratios, ssim
from .io import (
    SceneDataset,
    generate_synthetic,
    load_cameras,
    load_checkpoint,
    load_dataset,
    load_image,
    read_pointlist,
    save_cameras,
    save_checkpoint,
    save_dataset,
    save_image,
    write_pointlist,
)
from .render import RenderOptions, psnr, render_image
from .selector import SelectorNet, TemperatureSchedule, select_topk_inference
from .train import TrainConfig, TrainedBundle, load_bundle, save_bundle, train

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "ChecksumError",
    "CompactModel",
    "ConfigError",
    "ElasticSplat",
    "ElastisplatError",
    "FormatError",
    "GaussianModel",
    "ImportanceTable",
    "InvalidAttributeError",
    "InvalidRatioError",
    "RenderOptions",
    "SceneDataset",
    "SelectorNet",
    "StaleGraphError",
    "StaleImportanceError",
    "TemperatureSchedule",
    "TrainConfig",
    "TrainedBundle",
    "TransformField",
    "VersionError",
    "compress",
    "compute_gi",
    "eval_ratios",
    "generate_synthetic",
    "guidance_mask",
    "load_bundle",
    "load_cameras",
    "load_checkpoint",
    "load_dataset",
    "load_image",
    "look_at_camera",
    "psnr",
    "read_pointlist",
    "render_image",
    "save_bundle",
    "save_cameras",
    "save_checkpoint",
    "save_dataset",
    "save_image",
    "select_topk_inference",
    "ssim",
    "train",
    "transform_model",
    "write_pointlist",
]
