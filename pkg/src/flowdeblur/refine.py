"""Occlusion-aware spatio-temporal filtering of the latent frames.

Occlusion states come from forward-backward flow consistency; the filter
replaces each pixel by a patch-similarity-weighted average over small
windows around its flow correspondences in neighbouring frames (the frame
itself participates with occlusion state 1 and zero flow).
"""

from __future__ import annotations

import numpy as np

from .core import check_flow, grid_positions, sample_bilinear

__all__ = ["detect_occlusion", "build_occlusion_maps", "spatiotemporal_filter"]

#: forward-backward consistency thresholds (px): fully visible / half / occluded
CONSISTENT_PX = 0.5
HALF_VISIBLE_PX = 1.5

_PATCH = 5  # patch side for the similarity weights
_WINDOW = 1  # window reach around each correspondence (3x3)


def detect_occlusion(fwd, bwd):
    """Per-pixel occlusion state in {1, 0.5, 0} from a flow pair.

    The consistency error is e(x) = ||fwd(x) + bwd(x + fwd(x))||; states are
    1 for e <= 0.5 px, 0.5 for e <= 1.5 px, 0 beyond.
    """
    fwd = check_flow(fwd)
    bwd = check_flow(bwd, fwd.shape[:2])
    pos = grid_positions(*fwd.shape[:2]) + fwd
    back = sample_bilinear(bwd, pos)
    err = np.hypot(fwd[..., 0] + back[..., 0], fwd[..., 1] + back[..., 1])
    return np.where(err <= CONSISTENT_PX, 1.0, np.where(err <= HALF_VISIBLE_PX, 0.5, 0.0))


def build_occlusion_maps(state, n_neighbors):
    """Occlusion maps for every (frame, offset) pair with a neighbour."""
    occ = {}
    for i in range(state.num_frames):
        for n in state.valid_offsets(i, n_neighbors):
            occ[(i, n)] = detect_occlusion(state.flow_to(i, n), state.flow_to(i + n, -n))
    return occ


def _channel_sum(a):
    return a.sum(axis=2) if a.ndim == 3 else a


def spatiotemporal_filter(state, occ, sigma_w):
    """Patch-weighted averaging across aligned neighbour frames.

    For each pixel x of frame i and each offset n (n = 0 plus every offset
    present in ``occ``), candidate pixels y range over the 3x3 integer window
    around x + u_{i->i+n}; their weights are o_{i,n}(x) * exp(-d/(2 sigma_w^2))
    where d is the 5x5 channel-summed patch SSD between x and y, normalized
    by the patch pixel count.  Pixels whose weight total falls below 1e-8 are
    left unchanged.  Returns new latent frames; ``state`` is not modified.
    """
    shape = state.frame_shape
    h, w = shape[:2]
    ys, xs = np.indices((h, w))
    patch_offsets = [
        (py, px)
        for py in range(-(_PATCH // 2), _PATCH // 2 + 1)
        for px in range(-(_PATCH // 2), _PATCH // 2 + 1)
    ]
    window_offsets = [
        (wy, wx)
        for wy in range(-_WINDOW, _WINDOW + 1)
        for wx in range(-_WINDOW, _WINDOW + 1)
    ]
    norm = 2.0 * sigma_w * sigma_w
    out = []
    for i in range(state.num_frames):
        ref = state.latent[i]
        offsets = [0] + sorted(n for (fi, n) in occ if fi == i)
        num = np.zeros(shape)
        den = np.zeros((h, w))
        for n in offsets:
            neighbour = state.latent[i + n]
            weight_gate = np.ones((h, w)) if n == 0 else occ[(i, n)]
            flow = state.flow_to(i, n)
            cx = np.clip(np.rint(xs + flow[..., 0]), 0, w - 1).astype(np.intp)
            cy = np.clip(np.rint(ys + flow[..., 1]), 0, h - 1).astype(np.intp)
            for wy, wx in window_offsets:
                ty = np.clip(cy + wy, 0, h - 1)
                tx = np.clip(cx + wx, 0, w - 1)
                ssd = np.zeros((h, w))
                for py, px in patch_offsets:
                    sy = np.clip(ys + py, 0, h - 1)
                    sx = np.clip(xs + px, 0, w - 1)
                    qy = np.clip(ty + py, 0, h - 1)
                    qx = np.clip(tx + px, 0, w - 1)
                    diff = ref[sy, sx] - neighbour[qy, qx]
                    ssd += _channel_sum(diff * diff)
                wgt = weight_gate * np.exp(-(ssd / len(patch_offsets)) / norm)
                num += (wgt[..., None] if ref.ndim == 3 else wgt) * neighbour[ty, tx]
                den += wgt
        ok = den >= 1e-8
        safe_den = np.where(ok, den, 1.0)
        averaged = num / (safe_den[..., None] if ref.ndim == 3 else safe_den)
        mask = ok[..., None] if ref.ndim == 3 else ok
        out.append(np.where(mask, averaged, ref))
    return out
