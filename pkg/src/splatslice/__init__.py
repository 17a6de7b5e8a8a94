"""splatslice: compiler, codec and CPU renderer for sliced Gaussian splat volumes."""

from .codec import decode_asset, encode_asset, load_asset, save_asset
from .compiler import LayeredAsset, consolidate, dedup_sh, reconstruct_state
from .core import (
    CameraPose,
    GaussianPrimitive,
    ShCoefficients,
    SlicingPlane,
    covariance,
    evaluate_color,
    hard_visibility,
    modulated_opacity,
    projected_radius,
    signed_distance,
)
from .frames import FrameImage
from .ingest import GaussianCloud, StateSequence, load_state_sequence, parse_ply, validate_cloud
from .metrics import MetricReport, psnr, ssim
from .renderer import RenderMode, active_set, composite, project_gaussian, render, select_state

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "FrameImage",
    "GaussianCloud",
    "GaussianPrimitive",
    "LayeredAsset",
    "MetricReport",
    "RenderMode",
    "ShCoefficients",
    "SlicingPlane",
    "StateSequence",
    "active_set",
    "composite",
    "consolidate",
    "covariance",
    "decode_asset",
    "dedup_sh",
    "encode_asset",
    "evaluate_color",
    "hard_visibility",
    "load_asset",
    "load_state_sequence",
    "modulated_opacity",
    "parse_ply",
    "project_gaussian",
    "projected_radius",
    "psnr",
    "reconstruct_state",
    "render",
    "save_asset",
    "select_state",
    "signed_distance",
    "ssim",
    "validate_cloud",
]
