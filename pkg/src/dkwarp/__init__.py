"""Deformable kernel-region warping layer for video frame interpolation."""

from .blend import blend, blend_grads
from .flow import ProjectionReport, fill_holes, project_flow, synthetic_flow
from .grads import (
    WarpGradients,
    finite_difference_audit,
    grad_flow,
    grad_image,
    grad_kernel,
    grad_offset,
    warp_backward,
)
from .losses import LossConfig, charbonnier, psnr, ssim, total_loss
from .tensor import bilinear_sample, read_image, read_tensor, write_image, write_tensor
from .warp import (
    GEOMETRY,
    KernelGeometry,
    classify_quadrant,
    fractional_parts,
    quadrant_weights,
    synthesize_pixel,
    warp_frame,
)

__version__ = "0.1.0"

__all__ = [
    "blend",
    "blend_grads",
    "ProjectionReport",
    "fill_holes",
    "project_flow",
    "synthetic_flow",
    "WarpGradients",
    "finite_difference_audit",
    "grad_flow",
    "grad_image",
    "grad_kernel",
    "grad_offset",
    "warp_backward",
    "LossConfig",
    "charbonnier",
    "psnr",
    "ssim",
    "total_loss",
    "bilinear_sample",
    "read_image",
    "read_tensor",
    "write_image",
    "write_tensor",
    "GEOMETRY",
    "KernelGeometry",
    "classify_quadrant",
    "fractional_parts",
    "quadrant_weights",
    "synthesize_pixel",
    "warp_frame",
]
