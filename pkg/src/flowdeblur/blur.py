"""Pixel-wise bidirectional motion-blur operator and exposure estimation.

A blurry frame is modelled as the time average of the latent frame warped
along its forward and backward flows over the exposure: the kernel at pixel x
is a piecewise-linear segment pair [0, tau*u_fwd(x)] and [0, tau*u_bwd(x)],
discretized with a midpoint rule of S samples per direction so every sample
carries weight 1/(2S).  The implied per-pixel kernels are non-negative and
sum to one (clamped bilinear corner weights always total one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (
    as_image,
    check_flow,
    derivative_filters,
    grid_positions,
    sample_bilinear,
    scatter_bilinear,
)

__all__ = [
    "BlurParams",
    "RasterKernel",
    "auto_samples",
    "sample_times",
    "apply_blur",
    "apply_blur_adjoint",
    "rasterize_kernel",
    "estimate_duty_cycle",
    "DUTY_GRID",
]

#: Exposure-fraction search grid for duty-cycle estimation.
DUTY_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))

#: Pixels whose flow is at least this fast (px/frame) carry a usable
#: exposure signal; slower ones see sub-pixel blur paths at every grid value.
DUTY_MIN_SPEED = 2.0


@dataclass(frozen=True)
class BlurParams:
    """Exposure fraction (duty cycle) and integration sample count."""

    tau: float
    samples: int

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1], got %r" % (self.tau,))
        if int(self.samples) < 1 or self.samples != int(self.samples):
            raise ValueError("samples must be a positive integer")


def auto_samples(tau, fwd, bwd):
    """Sample count keeping spacing along the blur path at <= 1 px.

    Returns max(2, ceil(tau * m)) where m is the largest absolute flow
    component over both directions.
    """
    m = 0.0
    for f in (fwd, bwd):
        if f is not None and np.asarray(f).size:
            m = max(m, float(np.max(np.abs(f))))
    return max(2, int(math.ceil(tau * m)))


def sample_times(tau, samples):
    """Midpoint-rule sample times t_s = tau * (s - 1/2) / S, s = 1..S."""
    s = np.arange(1, samples + 1, dtype=np.float64)
    return tau * (s - 0.5) / samples


def _balanced_sum(arrays):
    # Pairwise reduction: for power-of-two counts of identical addends the
    # partial sums stay exact, which keeps zero-flow blur the identity
    # bit-for-bit (sequential accumulation rounds at the third addend).
    arrays = list(arrays)
    while len(arrays) > 1:
        nxt = [arrays[k] + arrays[k + 1] for k in range(0, len(arrays) - 1, 2)]
        if len(arrays) % 2:
            nxt.append(arrays[-1])
        arrays = nxt
    return arrays[0]


def _check_blur_inputs(img, fwd, bwd):
    img = as_image(img)
    fwd = check_flow(fwd, img.shape[:2])
    bwd = check_flow(bwd, img.shape[:2])
    return img, fwd, bwd


def apply_blur(img, fwd, bwd, params):
    """Apply the bidirectional blur operator K to ``img``.

    out(x) = 1/(2S) * sum_s [ img(x + t_s*fwd(x)) + img(x + t_s*bwd(x)) ]
    with midpoint times t_s.  Linear in ``img``; rows of the implied matrix
    are non-negative and sum to one.
    """
    img, fwd, bwd = _check_blur_inputs(img, fwd, bwd)
    base = grid_positions(*img.shape[:2])
    times = sample_times(params.tau, params.samples)
    gathered = []
    for flow in (fwd, bwd):
        gathered.append(
            _balanced_sum([sample_bilinear(img, base + t * flow) for t in times])
        )
    return (gathered[0] + gathered[1]) / (2.0 * params.samples)


def apply_blur_adjoint(residual, fwd, bwd, params):
    """Apply K^T: scatter ``residual`` along both blur paths.

    Exact adjoint of :func:`apply_blur` for the same flows and parameters;
    scattering is sequential (``np.add.at``), so results are deterministic.
    """
    residual, fwd, bwd = _check_blur_inputs(residual, fwd, bwd)
    base = grid_positions(*residual.shape[:2])
    times = sample_times(params.tau, params.samples)
    acc = []
    for flow in (fwd, bwd):
        buf = np.zeros_like(residual)
        for t in times:
            scatter_bilinear(residual, base + t * flow, buf)
        acc.append(buf)
    return (acc[0] + acc[1]) / (2.0 * params.samples)


# ---------------------------------------------------------------------------
# explicit kernels
# ---------------------------------------------------------------------------


@dataclass
class RasterKernel:
    """A blur kernel rasterized on an odd-sized window centred on its pixel."""

    center: tuple
    window: int
    weights: np.ndarray

    def to_text(self):
        """Plain-text grid (rows of space-separated weights)."""
        return "\n".join(
            " ".join(repr(float(v)) for v in row) for row in self.weights
        )


def rasterize_kernel(center, fwd_vec, bwd_vec, params, window):
    """Materialize the kernel of one pixel given its two flow vectors.

    Accumulates exactly the bilinear sample weights that :func:`apply_blur`
    uses at that pixel into a ``window`` x ``window`` grid whose middle cell
    is the pixel itself.  Raises if the window cannot contain the path.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    fwd_vec = np.asarray(fwd_vec, dtype=np.float64).reshape(2)
    bwd_vec = np.asarray(bwd_vec, dtype=np.float64).reshape(2)
    half = window // 2
    reach = params.tau * max(float(np.max(np.abs(fwd_vec))), float(np.max(np.abs(bwd_vec))))
    if math.floor(reach) + 1 > half:
        raise ValueError(
            "window %d too small for blur path reach %.3f px" % (window, reach)
        )
    weights = np.zeros((window, window), dtype=np.float64)
    times = sample_times(params.tau, params.samples)
    w_sample = 1.0 / (2.0 * params.samples)
    for vec in (fwd_vec, bwd_vec):
        for t in times:
            ox, oy = t * vec[0], t * vec[1]
            x0, y0 = math.floor(ox), math.floor(oy)
            fx, fy = ox - x0, oy - y0
            for ddx, ddy, wgt in (
                (0, 0, (1 - fx) * (1 - fy)),
                (1, 0, fx * (1 - fy)),
                (0, 1, (1 - fx) * fy),
                (1, 1, fx * fy),
            ):
                weights[half + y0 + ddy, half + x0 + ddx] += w_sample * wgt
    return RasterKernel(center=tuple(center), window=window, weights=weights)


# ---------------------------------------------------------------------------
# duty-cycle estimation
# ---------------------------------------------------------------------------


def _unsharp(img, amount=1.5, sigma=1.0):
    img = np.asarray(img, dtype=np.float64)
    sig = (sigma, sigma) + (0,) * (img.ndim - 2)
    smooth = ndimage.gaussian_filter(img, sig, mode="nearest")
    return img + amount * (img - smooth)


def estimate_duty_cycle(blurry, fwd, bwd, samples=None, grid=DUTY_GRID):
    """Estimate the per-frame exposure fraction from blurry frames and flows.

    For each frame, an unsharp-masked proxy of the blurry frame stands in for
    the latent image; the grid value whose re-blur best matches the observed
    frame in the derivative domain wins (smallest value on ties).  The
    residual is restricted to pixels moving at least DUTY_MIN_SPEED px/frame:
    slower pixels see sub-pixel blur paths at every grid value, so their
    (large) proxy error swamps the exposure signal.  When nothing moves that
    fast the full frame is used, which degenerates to the smallest grid value
    for zero flows.  The temporal median of the per-frame winners is assigned
    to every frame.

    Returns a list of identical tau values, one per frame.
    """
    if len(blurry) < 2:
        raise ValueError("duty-cycle estimation needs at least 2 frames")
    if not (len(fwd) == len(bwd) == len(blurry)):
        raise ValueError("flow lists must match the frame count")
    per_frame = []
    for img, uf, ub in zip(blurry, fwd, bwd):
        img = as_image(img)
        speed = np.maximum(
            np.hypot(uf[..., 0], uf[..., 1]), np.hypot(ub[..., 0], ub[..., 1])
        )
        mask = speed >= DUTY_MIN_SPEED
        if not mask.any():
            mask = np.ones_like(mask)
        proxy = _unsharp(img)
        target = derivative_filters(img)
        best_tau, best_err = None, None
        for tau in grid:
            s = samples if samples is not None else auto_samples(tau, uf, ub)
            pred = apply_blur(proxy, uf, ub, BlurParams(tau=tau, samples=s))
            err = 0.0
            for d_pred, d_img in zip(derivative_filters(pred), target):
                err += float(np.sum(((d_pred - d_img)[mask]) ** 2))
            if best_err is None or err < best_err:
                best_tau, best_err = tau, err
        per_frame.append(best_tau)
    tau_med = float(np.median(per_frame))
    return [tau_med] * len(blurry)
