"""flowdeblur: joint video deblurring and optical flow for dynamic scenes.

Restores sharp frames from motion-blurred video by alternating between
latent-image estimation (with pixel-wise blur kernels built from
bidirectional optical flow) and flow refinement, on a coarse-to-fine
pyramid, followed by an occlusion-aware spatiotemporal filter.
"""

from .blur import (
    BlurParams,
    apply_blur,
    apply_blur_adjoint,
    auto_samples,
    estimate_duty_cycle,
    rasterize_kernel,
    sample_times,
)
from .core import (
    DualState,
    SequenceState,
    SolverParams,
    compose_flow,
    sample_bilinear,
    warp_image,
    zero_flow,
)
from .energy import EnergyBreakdown, breakdown, edge_map, restoration_energy
from .evalkit import (
    ObjectSpec,
    SceneSpec,
    SyntheticScene,
    demo_scene,
    epe,
    flow_to_color,
    psnr,
    render_scene,
    synthesize_blur,
)
from .fileio import load_image, read_flo, save_image, write_flo
from .flow import estimate_flows, rho_gradient, update_flow
from .latent import CGDivergenceError, primal_update_latent, restore_latent
from .pipeline import build_pyramid, init_flows, propagate, pyramid_dims, run
from .refine import build_occlusion_maps, detect_occlusion, spatiotemporal_filter

__version__ = "0.1.0"

__all__ = [
    "BlurParams",
    "CGDivergenceError",
    "DualState",
    "EnergyBreakdown",
    "ObjectSpec",
    "SceneSpec",
    "SequenceState",
    "SolverParams",
    "SyntheticScene",
    "apply_blur",
    "apply_blur_adjoint",
    "auto_samples",
    "breakdown",
    "build_occlusion_maps",
    "build_pyramid",
    "compose_flow",
    "demo_scene",
    "detect_occlusion",
    "edge_map",
    "epe",
    "estimate_duty_cycle",
    "estimate_flows",
    "flow_to_color",
    "init_flows",
    "load_image",
    "primal_update_latent",
    "propagate",
    "psnr",
    "pyramid_dims",
    "rasterize_kernel",
    "read_flo",
    "render_scene",
    "restoration_energy",
    "restore_latent",
    "rho_gradient",
    "run",
    "sample_bilinear",
    "sample_times",
    "save_image",
    "spatiotemporal_filter",
    "synthesize_blur",
    "update_flow",
    "warp_image",
    "write_flo",
    "zero_flow",
]
