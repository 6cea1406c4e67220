"""Deformation-driven synthesis of palm-like crease images.

Dense flow fields estimated between image pairs are filtered into a reusable
deformation library; a three-stage diffusion sampler then warps both its
structural condition and its injected noise with one library field.
"""

from .diffusion import SamplerConfig, make_linear_schedule, gaussian_denoiser, sample_three_stage
from .flow import FlowEstimatorParams, estimate_flow
from .noise import TransportConfig, warp_noise
from .prior import DeformationLibrary, build_library, load_library, sample_deformation, save_library

__version__ = "0.1.0"

__all__ = [
    "DeformationLibrary",
    "FlowEstimatorParams",
    "SamplerConfig",
    "TransportConfig",
    "build_library",
    "estimate_flow",
    "gaussian_denoiser",
    "load_library",
    "make_linear_schedule",
    "sample_deformation",
    "sample_three_stage",
    "save_library",
    "warp_noise",
]
