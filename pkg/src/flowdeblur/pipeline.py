"""Coarse-to-fine orchestration of the joint restoration/flow solver.

A run initializes flows on the blurry input (pure flow estimation with the
data term off), estimates the exposure fraction once at full resolution,
then alternates latent restoration and flow estimation over a bicubic
pyramid, applying the occlusion-aware filter at the end of each level and
propagating frames and flows to the next finer level.  Per-level energies
are guaranteed non-increasing across the alternation loop and are reported
through an optional progress hook.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy import ndimage

from .blur import estimate_duty_cycle
from .core import DualState, SequenceState, SolverParams, as_image, zero_flow
from .energy import breakdown, edge_map
from .flow import estimate_flows
from .latent import restore_latent
from .refine import build_occlusion_maps, spatiotemporal_filter

__all__ = [
    "pyramid_dims",
    "resize_image",
    "resize_flow",
    "build_pyramid",
    "propagate",
    "init_flows",
    "total_energy",
    "run",
]

_MIN_DIM = 8  # coarsest level keeps both dimensions at or above this


def pyramid_dims(width, height, scale, levels=None):
    """Per-level (height, width) pairs, coarsest first.

    Level k (counting from the finest) has dimensions round(original *
    scale^k); the level count is the requested one capped so the coarsest
    level keeps both dimensions >= 8 px, and the finest level is always the
    input resolution exactly.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    if not 0.0 < scale < 1.0:
        raise ValueError("scale must lie in (0, 1)")

    def dim(v, k):
        return int(v * scale**k + 0.5)

    smallest = min(width, height)
    if smallest <= _MIN_DIM:
        auto = 1
    else:
        auto = max(1, math.ceil(math.log(_MIN_DIM / smallest) / math.log(scale)))
    n = auto if levels is None else min(int(levels), auto)
    n = max(n, 1)
    while n > 1 and min(dim(width, n - 1), dim(height, n - 1)) < _MIN_DIM:
        n -= 1
    return [(dim(height, k), dim(width, k)) for k in range(n - 1, -1, -1)]


def resize_image(img, shape):
    """Bicubic (interpolating cubic spline) resample to (height, width)."""
    img = np.asarray(img, dtype=np.float64)
    to_h, to_w = int(shape[0]), int(shape[1])
    h, w = img.shape[:2]
    if (to_h, to_w) == (h, w):
        return img.copy()
    ys = (np.arange(to_h, dtype=np.float64) + 0.5) * (h / to_h) - 0.5
    xs = (np.arange(to_w, dtype=np.float64) + 0.5) * (w / to_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack((yy, xx))

    def one(channel):
        return ndimage.map_coordinates(channel, coords, order=3, mode="nearest")

    if img.ndim == 2:
        return one(img)
    return np.stack([one(img[..., c]) for c in range(img.shape[2])], axis=-1)


def resize_flow(flow, shape):
    """Resample a flow field and rescale its vectors to the new pixel grid."""
    to_h, to_w = int(shape[0]), int(shape[1])
    h, w = flow.shape[:2]
    out = np.stack(
        [resize_image(flow[..., c], (to_h, to_w)) for c in range(2)], axis=-1
    )
    out[..., 0] *= to_w / w
    out[..., 1] *= to_h / h
    return out


def build_pyramid(frames, params):
    """Per-level frame lists, coarsest first; finest equals the input."""
    frames = [as_image(f) for f in frames]
    h, w = frames[0].shape[:2]
    dims = pyramid_dims(w, h, params.pyr_scale, params.pyr_levels)
    return [[resize_image(f, d) for f in frames] for d in dims]


def propagate(state, to_shape, blurry=None):
    """Carry a state to the next finer level.

    Latent frames are bicubically upsampled (clipped to [0, 1]); flows are
    upsampled with their vectors scaled by the resolution ratio.  ``blurry``
    supplies the observed frames at the finer level (resampled from the
    current ones when omitted).  Raises if ``to_shape`` is not strictly finer.
    """
    from_h, from_w = state.frame_shape[:2]
    to_h, to_w = int(to_shape[0]), int(to_shape[1])
    if to_h < from_h or to_w < from_w or (to_h, to_w) == (from_h, from_w):
        raise ValueError(
            "propagate expects a strictly finer level, got %r -> %r"
            % ((from_h, from_w), (to_h, to_w))
        )
    if blurry is None:
        blurry = [resize_image(b, (to_h, to_w)) for b in state.blurry]
    return SequenceState(
        blurry=list(blurry),
        latent=[np.clip(resize_image(f, (to_h, to_w)), 0.0, 1.0) for f in state.latent],
        fwd=[resize_flow(f, (to_h, to_w)) for f in state.fwd],
        bwd=[resize_flow(f, (to_h, to_w)) for f in state.bwd],
        duty=list(state.duty),
    )


def _check_sequence(frames):
    frames = [as_image(f) for f in frames]
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise ValueError("frame %d shape %r != %r" % (i, f.shape, shape))
    return frames


def init_flows(blurry, params=None):
    """Coarse-to-fine flow estimation on the blurry frames themselves.

    Runs the flow module with the data term off (classic TV-L1-style flow,
    blurry frames standing in for the latent ones) from zero flows over the
    full pyramid.  Returns full-resolution (fwd, bwd) flow lists.
    """
    params = params or SolverParams()
    frames = _check_sequence(blurry)
    # Freeze the edge-map scale and temporal weight at their values under the
    # caller's lambda before zeroing it: nu and mu default to multiples of
    # lambda, and a zero edge map would both erase the flow prior and blow up
    # the 1/max(g) step sizes.
    p0 = replace(params, lam=0.0, nu=params.nu_value, mu=params.mu_value)
    h, w = frames[0].shape[:2]
    dims = pyramid_dims(w, h, p0.pyr_scale, p0.pyr_levels)
    t = len(frames)
    fwd = bwd = None
    for li, d in enumerate(dims):
        level = [resize_image(f, d) for f in frames]
        if li == 0:
            fwd = [zero_flow(*d) for _ in range(t)]
            bwd = [zero_flow(*d) for _ in range(t)]
        else:
            fwd = [resize_flow(f, d) for f in fwd]
            bwd = [resize_flow(f, d) for f in bwd]
        state = SequenceState(
            blurry=level,
            latent=[f.copy() for f in level],
            fwd=fwd,
            bwd=bwd,
            duty=[1.0] * t,
        )
        duals = DualState.zeros(state, p0)
        maps = [edge_map(f, p0.nu_value, p0.sigma_i) for f in state.latent]
        estimate_flows(state, duals, p0, maps)
        fwd, bwd = state.fwd, state.bwd
    return fwd, bwd


def total_energy(state, params, edge_maps=None):
    """Objective breakdown at ``state`` (see :class:`EnergyBreakdown`)."""
    return breakdown(state, params, edge_maps)


def _emit(progress, records, level, shape, iteration, phase, eb):
    rec = {
        "level": level,
        "height": shape[0],
        "width": shape[1],
        "iteration": iteration,
        "phase": phase,
        "e_data": eb.data,
        "e_temporal": eb.temporal,
        "e_spatial": eb.spatial,
        "e_total": eb.total,
    }
    records.append(rec)
    if progress is not None:
        progress(rec)


def run(blurry, params=None, progress=None):
    """Restore a blurry sequence and estimate its bidirectional flows.

    Parameters
    ----------
    blurry : list of images (uniform shape, >= 2 frames)
    params : SolverParams, optional
    progress : callable, optional
        Receives one dict per energy checkpoint with keys level, height,
        width, iteration, phase ('entry'/'latent'/'flow'/'refine'),
        e_data, e_temporal, e_spatial, e_total.

    Returns
    -------
    (state, records) : the final full-resolution SequenceState and the list
    of all emitted energy records.  Within every pyramid level the e_total
    sequence over entry/latent/flow records is non-increasing.
    """
    params = (params or SolverParams()).validate()
    frames = _check_sequence(blurry)
    t = len(frames)
    h, w = frames[0].shape[:2]

    fwd0, bwd0 = init_flows(frames, params)
    if params.duty is None:
        duty = estimate_duty_cycle(frames, fwd0, bwd0, samples=params.blur_samples)
    else:
        duty = [params.duty] * t

    dims = pyramid_dims(w, h, params.pyr_scale, params.pyr_levels)
    records = []
    state = None
    for li, d in enumerate(dims):
        level_blurry = [resize_image(f, d) for f in frames]
        if li == 0:
            state = SequenceState(
                blurry=level_blurry,
                latent=[f.copy() for f in level_blurry],
                fwd=[resize_flow(f, d) for f in fwd0],
                bwd=[resize_flow(f, d) for f in bwd0],
                duty=list(duty),
            )
        else:
            state = propagate(state, d, blurry=level_blurry)
        maps = [edge_map(f, params.nu_value, params.sigma_i) for f in state.latent]
        duals = DualState.zeros(state, params)
        _emit(progress, records, li, d, 0, "entry", breakdown(state, params, maps))
        for it in range(params.outer_iters):
            restore_latent(state, duals, params)
            _emit(progress, records, li, d, it, "latent", breakdown(state, params, maps))
            estimate_flows(state, duals, params, maps)
            _emit(progress, records, li, d, it, "flow", breakdown(state, params, maps))
        if not params.filter_finest_only or li == len(dims) - 1:
            occ = build_occlusion_maps(state, params.n_neighbors)
            state.latent = spatiotemporal_filter(state, occ, params.sigma_w)
            _emit(progress, records, li, d, params.outer_iters, "refine",
                  breakdown(state, params, maps))
    return state, records
