"""Image and flow primitives shared by every solver stage.

Conventions
-----------
* Images are float64 arrays of shape ``(H, W)`` or ``(H, W, C)`` with C in
  {1, 3}, nominal intensity range [0, 1].
* Flow fields are float64 arrays of shape ``(H, W, 2)``; ``[..., 0]`` is the
  horizontal displacement u (positive = rightward), ``[..., 1]`` the vertical
  displacement v (positive = downward), both in pixels.
* Continuous positions are ``(x, y)`` pairs; sampling outside the image clamps
  to the border (replicate).  All operations are pure functions of their
  inputs, keep float64 precision and never introduce NaN/Inf on finite input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "as_image",
    "zero_flow",
    "check_flow",
    "grid_positions",
    "sample_bilinear",
    "sample_bilinear_grad",
    "scatter_bilinear",
    "warp_image",
    "compose_flow",
    "dx",
    "dy",
    "dxT",
    "dyT",
    "derivative_filters",
    "gradient",
    "SolverParams",
    "SequenceState",
    "DualState",
]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def as_image(a):
    """Coerce ``a`` to a float64 image array and validate it.

    Accepts shape (H, W) or (H, W, C) with C in {1, 3}; rejects non-finite
    values.  Returns a float64 array (a copy only if conversion is needed).
    """
    img = np.asarray(a, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError("image must be 2-D or 3-D, got shape %r" % (img.shape,))
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ValueError("image must have 1 or 3 channels, got %d" % img.shape[2])
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be non-empty, got shape %r" % (img.shape,))
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def zero_flow(height, width):
    """All-zero flow field of shape (height, width, 2)."""
    return np.zeros((int(height), int(width), 2), dtype=np.float64)


def check_flow(flow, shape=None):
    """Validate a flow field; optionally against an expected (H, W)."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must have shape (H, W, 2), got %r" % (flow.shape,))
    if shape is not None and flow.shape[:2] != tuple(shape):
        raise ValueError(
            "flow shape %r does not match expected %r" % (flow.shape[:2], tuple(shape))
        )
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    return flow


def grid_positions(height, width):
    """Pixel-centre positions as an (H, W, 2) array of (x, y) pairs."""
    ys, xs = np.meshgrid(
        np.arange(height, dtype=np.float64),
        np.arange(width, dtype=np.float64),
        indexing="ij",
    )
    return np.stack((xs, ys), axis=-1)


# ---------------------------------------------------------------------------
# bilinear sampling / scattering
# ---------------------------------------------------------------------------


def _corner_setup(pos, height, width):
    # Returns integer corner indices (clamped) and the four bilinear weights.
    # Clamping the integer corners is exactly equivalent to clamping the
    # continuous coordinate first, so the sampler is clamp-to-edge.
    x = pos[..., 0]
    y = pos[..., 1]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0i = np.clip(x0, 0, width - 1).astype(np.intp)
    x1i = np.clip(x0 + 1.0, 0, width - 1).astype(np.intp)
    y0i = np.clip(y0, 0, height - 1).astype(np.intp)
    y1i = np.clip(y0 + 1.0, 0, height - 1).astype(np.intp)
    w00 = (1.0 - fx) * (1.0 - fy)
    w10 = fx * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w11 = fx * fy
    return (x0i, x1i, y0i, y1i), (w00, w10, w01, w11), (fx, fy)


def _expand(w, img):
    # Broadcast a weight array over trailing channel axes of img samples.
    return w[..., None] if img.ndim == 3 else w


def sample_bilinear(img, pos):
    """Bilinear sample of ``img`` at continuous (x, y) positions.

    Parameters
    ----------
    img : array, shape (H, W) or (H, W, C)
    pos : array, shape (..., 2)
        Positions in pixel units; coordinates outside the image clamp to the
        border.  A single (2,) position yields a scalar (or (C,) vector).
    """
    img = np.asarray(img, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    if pos.shape[-1] != 2:
        raise ValueError("positions must have a trailing axis of length 2")
    h, w = img.shape[:2]
    (x0i, x1i, y0i, y1i), (w00, w10, w01, w11), _ = _corner_setup(pos, h, w)
    out = (
        _expand(w00, img) * img[y0i, x0i] + _expand(w10, img) * img[y0i, x1i]
    ) + (_expand(w01, img) * img[y1i, x0i] + _expand(w11, img) * img[y1i, x1i])
    return out


def sample_bilinear_grad(img, pos):
    """Sample ``img`` bilinearly and return (value, d/dx, d/dy).

    The derivatives are the exact derivatives of the clamped bilinear
    interpolant (piecewise constant between lattice lines, zero where the
    position is clamped), so central finite differences of the sampled value
    reproduce them away from the lattice kinks.  On a lattice line the
    interpolant is not differentiable; there the returned component is the
    average of the two adjacent cell slopes (clamped cells slope 0).  A
    one-sided choice would push every descent step the same way at integer
    starting points, stalling flows whose true motion goes the other way.
    """
    img = np.asarray(img, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    h, w = img.shape[:2]
    (x0i, x1i, y0i, y1i), (w00, w10, w01, w11), (fx, fy) = _corner_setup(pos, h, w)
    i00 = img[y0i, x0i]
    i10 = img[y0i, x1i]
    i01 = img[y1i, x0i]
    i11 = img[y1i, x1i]
    val = (_expand(w00, img) * i00 + _expand(w10, img) * i10) + (
        _expand(w01, img) * i01 + _expand(w11, img) * i11
    )
    gx = _expand(1.0 - fy, img) * (i10 - i00) + _expand(fy, img) * (i11 - i01)
    gy = _expand(1.0 - fx, img) * (i01 - i00) + _expand(fx, img) * (i11 - i10)
    on_x = fx == 0.0
    if np.any(on_x):
        xm1i = np.clip(x0i - 1, 0, w - 1)
        left = _expand(1.0 - fy, img) * (i00 - img[y0i, xm1i]) + _expand(fy, img) * (
            i01 - img[y1i, xm1i]
        )
        gx = np.where(_expand(on_x, img), 0.5 * (gx + left), gx)
    on_y = fy == 0.0
    if np.any(on_y):
        ym1i = np.clip(y0i - 1, 0, h - 1)
        up = _expand(1.0 - fx, img) * (i00 - img[ym1i, x0i]) + _expand(fx, img) * (
            i10 - img[ym1i, x1i]
        )
        gy = np.where(_expand(on_y, img), 0.5 * (gy + up), gy)
    return val, gx, gy


def scatter_bilinear(values, pos, out):
    """Adjoint of :func:`sample_bilinear`: scatter ``values`` into ``out``.

    Each value is distributed onto the four (clamped) corner pixels of its
    position with the bilinear weights.  Accumulation uses ``np.add.at``,
    which applies updates sequentially, so the result is deterministic.
    """
    values = np.asarray(values, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    h, w = out.shape[:2]
    (x0i, x1i, y0i, y1i), (w00, w10, w01, w11), _ = _corner_setup(pos, h, w)
    np.add.at(out, (y0i, x0i), _expand(w00, out) * values)
    np.add.at(out, (y0i, x1i), _expand(w10, out) * values)
    np.add.at(out, (y1i, x0i), _expand(w01, out) * values)
    np.add.at(out, (y1i, x1i), _expand(w11, out) * values)
    return out


def warp_image(img, flow, t=1.0):
    """Sample ``img`` at ``x + t * flow(x)`` for every pixel x.

    With ``t = 0`` or an all-zero flow this is the identity, bit-exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    flow = check_flow(flow, img.shape[:2])
    pos = grid_positions(*img.shape[:2]) + t * flow
    return sample_bilinear(img, pos)


def compose_flow(first, second):
    """Chain two displacement fields: out(x) = first(x) + second(x + first(x)).

    ``first`` maps frame a to frame b and ``second`` maps frame b to frame c;
    the result maps frame a to frame c.  ``second`` is sampled bilinearly at
    the (clamped) arrival positions of ``first``.
    """
    first = check_flow(first)
    second = check_flow(second, first.shape[:2])
    pos = grid_positions(*first.shape[:2]) + first
    return first + sample_bilinear(second, pos)


# ---------------------------------------------------------------------------
# derivative filters (forward differences, replicate boundary) and adjoints
# ---------------------------------------------------------------------------


def dx(img):
    """Forward difference along x; last column is zero (replicate boundary)."""
    out = np.zeros_like(np.asarray(img, dtype=np.float64))
    out[:, :-1] = img[:, 1:] - img[:, :-1]
    return out


def dy(img):
    """Forward difference along y; last row is zero (replicate boundary)."""
    out = np.zeros_like(np.asarray(img, dtype=np.float64))
    out[:-1] = img[1:] - img[:-1]
    return out


def dxT(img):
    """Exact adjoint of :func:`dx` (negative backward difference)."""
    img = np.asarray(img, dtype=np.float64)
    out = np.zeros_like(img)
    out[:, 0] = -img[:, 0]
    out[:, 1:-1] = img[:, :-2] - img[:, 1:-1]
    out[:, -1] = img[:, -2]
    return out


def dyT(img):
    """Exact adjoint of :func:`dy`."""
    img = np.asarray(img, dtype=np.float64)
    out = np.zeros_like(img)
    out[0] = -img[0]
    out[1:-1] = img[:-2] - img[1:-1]
    out[-1] = img[-2]
    return out


#: (filter, adjoint) pairs used by the data term.
DERIVATIVE_PAIRS = ((dx, dxT), (dy, dyT))


def derivative_filters(img):
    """Apply the data-term derivative filter bank to ``img``: [dx, dy]."""
    return [dx(img), dy(img)]


def gradient(img):
    """Forward-difference gradient stacked as shape (2,) + img.shape."""
    img = np.asarray(img, dtype=np.float64)
    return np.stack((dx(img), dy(img)), axis=0)


def divergence_adjoint(stacked):
    """Adjoint of :func:`gradient`: maps a (2,)+shape dual back to a field."""
    return dxT(stacked[0]) + dyT(stacked[1])


# ---------------------------------------------------------------------------
# solver configuration
# ---------------------------------------------------------------------------

#: Largest flow move (in pixels) a single primal step may take under the
#: temporal force alone.  The temporal term is an L1 penalty, so its
#: (sub)gradient keeps the same magnitude ~mu*|grad L| arbitrarily close to
#: the optimum; without a cap the primal iterate hops back and forth across
#: the kink by mu-scaled strides and never settles.
FLOW_HOP_PX = 0.25


@dataclass
class SolverParams:
    """All tunables of the joint restoration/flow solver.

    ``None`` fields resolve to the documented defaults at access time:
    ``mu`` and ``nu`` derive from ``lam`` (temporal weight equals the data
    weight, edge-map scale is 0.08x the data weight), the step sizes derive
    from the operator-norm bounds, ``pyr_levels`` is chosen so the coarsest
    level keeps both dimensions at >= 8 px, and ``blur_samples`` follows the
    sample-spacing rule max(2, ceil(tau * max |flow component|)).
    """

    lam: float = 250.0
    mu: float | None = None
    nu: float | None = None
    sigma_i: float = 25.0 / 255.0
    sigma_w: float = 25.0 / 255.0
    n_neighbors: int = 2
    pyr_scale: float = 0.9
    pyr_levels: int | None = None
    outer_iters: int = 3
    pd_iters: int = 30
    flow_warps: int = 5
    cg_iters: int = 15
    cg_tol: float = 1e-4
    blur_samples: int | None = None
    duty: float | None = None
    temporal_enabled: bool = True
    filter_finest_only: bool = False
    eta_l: float | None = None
    eps_l: float | None = None
    eta_u: float | None = None
    eps_u: float | None = None

    def validate(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.mu is not None and self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.nu is not None and self.nu <= 0:
            raise ValueError("nu must be > 0")
        if self.sigma_i <= 0 or self.sigma_w <= 0:
            raise ValueError("sigma_i and sigma_w must be > 0")
        if self.n_neighbors < 0:
            raise ValueError("n_neighbors must be >= 0")
        if not 0.0 < self.pyr_scale < 1.0:
            raise ValueError("pyr_scale must lie in (0, 1)")
        if self.pyr_levels is not None and self.pyr_levels < 1:
            raise ValueError("pyr_levels must be >= 1")
        if min(self.outer_iters, self.pd_iters, self.flow_warps, self.cg_iters) < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.blur_samples is not None and self.blur_samples < 1:
            raise ValueError("blur_samples must be >= 1")
        if self.duty is not None and not 0.0 < self.duty <= 1.0:
            raise ValueError("duty must lie in (0, 1]")
        for name in ("eta_l", "eps_l", "eta_u", "eps_u"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError("%s must be > 0" % name)
        return self

    # resolved values -------------------------------------------------------

    @property
    def mu_value(self):
        return self.lam if self.mu is None else self.mu

    @property
    def nu_value(self):
        return 0.08 * self.lam if self.nu is None else self.nu

    def temporal_weight(self, n):
        """Weight of the temporal term at offset n (0 for the self term)."""
        return 0.0 if n == 0 else self.mu_value

    def latent_step_sizes(self):
        """(eta, eps) for the restoration subproblem.

        The dual operator stacks the TV gradient (norm^2 <= 8) and, when the
        temporal term is on, 2N directed difference rows of norm^2 <= 2 scaled
        by mu each; eta * eps * ||op||^2 <= 1 is enforced conservatively.
        """
        bound = 8.0
        if self.temporal_enabled and self.n_neighbors > 0:
            bound += 2.0 * (2 * self.n_neighbors) * self.mu_value**2
        default = 1.0 / math.sqrt(bound)
        eta = default if self.eta_l is None else self.eta_l
        eps = default if self.eps_l is None else self.eps_l
        return eta, eps

    def flow_step_sizes(self, edge_map, grad_bound=None):
        """(eta, eps) for the flow subproblem given that frame's edge map.

        Both default to the operator-norm value 1/(sqrt(8) * max g).  When a
        bound on the latent image gradient is supplied, eps is additionally
        clamped so one primal step moves the flow by at most FLOW_HOP_PX
        under the temporal force mu * grad_bound; shrinking eps only lowers
        the stability product eta * eps * 8 * g^2, so the bound still holds.
        """
        gmax = float(np.max(edge_map))
        default = 1.0 / (math.sqrt(8.0) * max(gmax, 1e-12))
        eta = default if self.eta_u is None else self.eta_u
        if self.eps_u is not None:
            return eta, self.eps_u
        eps = default
        if grad_bound is not None:
            force = self.mu_value * float(grad_bound)
            if force > 0.0:
                eps = min(eps, FLOW_HOP_PX / force)
        return eta, eps


# ---------------------------------------------------------------------------
# sequence state
# ---------------------------------------------------------------------------


@dataclass
class SequenceState:
    """Everything the solver tracks for one sequence at one resolution.

    ``fwd[i]`` is the flow from frame i to i+1 (the last entry is a zero
    field), ``bwd[i]`` the flow from frame i to i-1 (the first entry is a
    zero field); terms that would reference a missing neighbour are dropped
    by the solvers.  ``duty`` holds the per-frame exposure fraction in (0, 1].
    """

    blurry: list
    latent: list
    fwd: list
    bwd: list
    duty: list

    def validate(self):
        t = len(self.blurry)
        if t < 2:
            raise ValueError("a sequence needs at least 2 frames")
        if not (len(self.latent) == len(self.fwd) == len(self.bwd) == len(self.duty) == t):
            raise ValueError("state lists must share one length")
        shape = np.asarray(self.blurry[0]).shape
        for name, frames in (("blurry", self.blurry), ("latent", self.latent)):
            for i, f in enumerate(frames):
                img = as_image(f)
                if img.shape != shape:
                    raise ValueError("%s[%d] shape %r != %r" % (name, i, img.shape, shape))
        for name, flows in (("fwd", self.fwd), ("bwd", self.bwd)):
            for i, fl in enumerate(flows):
                check_flow(fl, shape[:2])
        for i, tau in enumerate(self.duty):
            if not 0.0 < tau <= 1.0:
                raise ValueError("duty[%d] = %r outside (0, 1]" % (i, tau))
        return self

    @property
    def num_frames(self):
        return len(self.blurry)

    @property
    def frame_shape(self):
        return np.asarray(self.blurry[0]).shape

    def valid_offsets(self, i, n_neighbors):
        """Temporal offsets n != 0 with an existing neighbour frame."""
        t = self.num_frames
        return [
            n
            for n in range(-n_neighbors, n_neighbors + 1)
            if n != 0 and 0 <= i + n < t
        ]

    def unit_flow(self, i, n):
        """The stored unit-offset flow u_{i -> i+n}, |n| = 1."""
        if n == 1:
            return self.fwd[i]
        if n == -1:
            return self.bwd[i]
        raise ValueError("unit_flow requires |n| = 1, got n=%d" % n)

    def flow_to(self, i, n):
        """Flow u_{i -> i+n}; composed from unit flows when |n| > 1."""
        if n == 0:
            h, w = self.frame_shape[:2]
            return zero_flow(h, w)
        step = 1 if n > 0 else -1
        if not 0 <= i + n < self.num_frames:
            raise ValueError("frame %d has no neighbour at offset %d" % (i, n))
        flow = self.unit_flow(i, step)
        j = i + step
        while j != i + n:
            flow = compose_flow(flow, self.unit_flow(j, step))
            j += step
        return flow

    def copy(self):
        return SequenceState(
            blurry=[np.array(f) for f in self.blurry],
            latent=[np.array(f) for f in self.latent],
            fwd=[np.array(f) for f in self.fwd],
            bwd=[np.array(f) for f in self.bwd],
            duty=list(self.duty),
        )


@dataclass
class DualState:
    """Dual variables, kept warm across iterations within a pyramid level.

    ``s[i]``: TV dual of latent frame i, shape (2,) + frame shape.
    ``q[(i, n)]``: temporal dual per directed pair, frame-shaped.
    ``p[(i, n)]``: flow-TV dual per unit direction, shape (2, H, W, 2).
    All entries stay inside [-1, 1] component-wise.
    """

    s: list = field(default_factory=list)
    q: dict = field(default_factory=dict)
    p: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, state, params):
        shape = state.frame_shape
        h, w = shape[:2]
        s = [np.zeros((2,) + shape) for _ in range(state.num_frames)]
        q = {}
        if params.temporal_enabled:
            for i in range(state.num_frames):
                for n in state.valid_offsets(i, params.n_neighbors):
                    q[(i, n)] = np.zeros(shape)
        p = {}
        for i in range(state.num_frames):
            for n in (-1, 1):
                if 0 <= i + n < state.num_frames:
                    p[(i, n)] = np.zeros((2, h, w, 2))
        return cls(s=s, q=q, p=p)

    def check_bounds(self, tol=1e-12):
        for arr in list(self.s) + list(self.q.values()) + list(self.p.values()):
            if arr.size and np.max(np.abs(arr)) > 1.0 + tol:
                raise AssertionError("dual variable escaped [-1, 1]")
        return True
