"""Objective-term evaluation shared by the solvers and the pipeline.

The joint objective splits into a restoration part (data fidelity in the
derivative domain + temporal consistency + anisotropic TV of the latent
frames) and an edge-weighted TV of the flows.  The two solver guards and the
pipeline's energy log all evaluate energies through this module with a fixed
accumulation grouping, so "did not increase" comparisons are exact in
floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blur import BlurParams, apply_blur, auto_samples
from .core import derivative_filters, dx, dy, warp_image

__all__ = [
    "EnergyBreakdown",
    "edge_map",
    "frame_blur_params",
    "data_energy",
    "temporal_energy",
    "latent_tv_energy",
    "flow_tv_energy",
    "breakdown",
    "restoration_energy",
]


@dataclass(frozen=True)
class EnergyBreakdown:
    """Values of the objective terms at one state."""

    data: float
    temporal: float
    tv_latent: float
    tv_flow: float

    @property
    def spatial(self):
        return self.tv_latent + self.tv_flow

    @property
    def restoration(self):
        # Grouping matters: the latent solver's guard compares exactly this.
        return (self.data + self.temporal) + self.tv_latent

    @property
    def total(self):
        return self.restoration + self.tv_flow


def edge_map(latent, nu, sigma_i):
    """Edge-stopping weights g = nu * exp(-(|grad L| / sigma_i)^2).

    The squared gradient magnitude is channel-summed, so colour frames yield
    a single (H, W) map; values lie in (0, nu].
    """
    latent = np.asarray(latent, dtype=np.float64)
    gx, gy = dx(latent), dy(latent)
    mag2 = gx * gx + gy * gy
    if latent.ndim == 3:
        mag2 = mag2.sum(axis=2)
    return nu * np.exp(-mag2 / (sigma_i * sigma_i))


def frame_blur_params(state, i, params):
    """Blur parameters for frame i: its duty cycle and the sample rule."""
    tau = state.duty[i]
    s = params.blur_samples
    if s is None:
        s = auto_samples(tau, state.fwd[i], state.bwd[i])
    return BlurParams(tau=tau, samples=s)


def data_energy(state, params):
    """lam * sum_i sum_d ||d(K_i L_i) - d(B_i)||^2 over the derivative bank."""
    if params.lam == 0.0:
        return 0.0
    total = 0.0
    for i in range(state.num_frames):
        bp = frame_blur_params(state, i, params)
        pred = apply_blur(state.latent[i], state.fwd[i], state.bwd[i], bp)
        resid = pred - state.blurry[i]
        for d in derivative_filters(resid):
            total += float(np.sum(d * d))
    return params.lam * total


def _flows_to(state, params):
    # One composed-flow table per evaluation; unit flows are shared refs.
    table = {}
    if not params.temporal_enabled:
        return table
    for i in range(state.num_frames):
        for n in state.valid_offsets(i, params.n_neighbors):
            table[(i, n)] = state.flow_to(i, n)
    return table


def temporal_energy(state, params, flows=None):
    """sum_{i,n} mu_n * || L_i - L_{i+n}(x + u_{i->i+n}) ||_1 (channel-summed)."""
    if not params.temporal_enabled or params.n_neighbors == 0:
        return 0.0
    if flows is None:
        flows = _flows_to(state, params)
    total = 0.0
    for (i, n), flow in flows.items():
        mu = params.temporal_weight(n)
        if mu == 0.0:
            continue
        resid = state.latent[i] - warp_image(state.latent[i + n], flow)
        total += mu * float(np.sum(np.abs(resid)))
    return total


def latent_tv_energy(state):
    """Anisotropic total variation of the latent frames, channel-summed."""
    total = 0.0
    for img in state.latent:
        total += float(np.sum(np.abs(dx(img))) + np.sum(np.abs(dy(img))))
    return total


def flow_tv_energy(state, params, edge_maps, flows=None):
    """Edge-weighted anisotropic TV of every flow in the objective."""
    if flows is None:
        flows = _flows_to(state, params)
    if not flows:  # temporal term off: fall back to the unit flows
        flows = {}
        for i in range(state.num_frames):
            for n in (-1, 1):
                if 0 <= i + n < state.num_frames:
                    flows[(i, n)] = state.unit_flow(i, n)
    total = 0.0
    for (i, n), flow in flows.items():
        g = edge_maps[i][..., None]
        total += float(np.sum(g * (np.abs(dx(flow)) + np.abs(dy(flow)))))
    return total


def breakdown(state, params, edge_maps=None):
    """Evaluate every objective term at ``state``.

    ``edge_maps`` freeze the flow-TV weights; when omitted they are computed
    from the current latent frames.
    """
    if edge_maps is None:
        nu, si = params.nu_value, params.sigma_i
        edge_maps = [edge_map(img, nu, si) for img in state.latent]
    flows = _flows_to(state, params)
    return EnergyBreakdown(
        data=data_energy(state, params),
        temporal=temporal_energy(state, params, flows),
        tv_latent=latent_tv_energy(state),
        tv_flow=flow_tv_energy(state, params, edge_maps, flows),
    )


def restoration_energy(state, params):
    """Data + temporal + latent-TV value minimized by the latent solver."""
    flows = _flows_to(state, params)
    return (
        data_energy(state, params) + temporal_energy(state, params, flows)
    ) + latent_tv_energy(state)
