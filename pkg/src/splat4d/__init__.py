"""4D Gaussian-splat scene engine: pixel-aligned splat maps, rigid per-object
motion, differentiable software rasterization, loss-driven fitting, and an
interactive render service."""

from .camera import CameraIntrinsics, Pose, project, transform_point, unproject
from .motion import MotionTable, ObjectMotion, aggregate, propagate
from .objectives import LatentGaussian, LossWeights, kl_to_standard_normal, metrics, total_loss
from .rasterizer import RenderConfig, RenderGradients, RenderOutput, render, render_with_gradients
from .splat_model import SplatMap, SplatSet, covariance, decode
from .fitter import FitProblem, FitReport, FitTarget, fit, init_splat_map, sample_motion

__all__ = [
    "CameraIntrinsics", "Pose", "project", "transform_point", "unproject",
    "MotionTable", "ObjectMotion", "aggregate", "propagate",
    "LatentGaussian", "LossWeights", "kl_to_standard_normal", "metrics", "total_loss",
    "RenderConfig", "RenderGradients", "RenderOutput", "render", "render_with_gradients",
    "SplatMap", "SplatSet", "covariance", "decode",
    "FitProblem", "FitReport", "FitTarget", "fit", "init_splat_map", "sample_motion",
]

__version__ = "0.1.0"
