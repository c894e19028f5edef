"""Latent-frame restoration: primal-dual sweeps with a CG primal step.

With the flows held fixed, the restoration objective
``lam * sum ||d(K L - B)||^2  +  sum mu_n |L_i - L_{i+n}(x+u)|  +  TV(L)``
is minimized by dualizing the two L1 terms (duals projected onto [-1, 1]
component-wise) and solving the remaining quadratic proximal step exactly
via conjugate gradients on its normal equations.

Frames are swept in ascending index order (Gauss-Seidel: each update sees the
newest neighbours), and a guard keeps the best-objective iterate so the
energy never increases across a call.
"""

from __future__ import annotations

import numpy as np

from .blur import apply_blur, apply_blur_adjoint
from .core import (
    divergence_adjoint,
    gradient,
    grid_positions,
    scatter_bilinear,
    warp_image,
)
from .energy import frame_blur_params, restoration_energy

__all__ = [
    "CGDivergenceError",
    "temporal_difference",
    "temporal_difference_adjoint",
    "dual_update_spatial",
    "dual_update_temporal",
    "primal_update_latent",
    "restore_latent",
]


class CGDivergenceError(RuntimeError):
    """The conjugate-gradient residual grew repeatedly: step sizes are bad."""


def temporal_difference(a, b, flow):
    """Directed temporal residual a(x) - b(x + flow(x))."""
    return np.asarray(a, dtype=np.float64) - warp_image(b, flow)


def temporal_difference_adjoint(q, flow):
    """Adjoint of :func:`temporal_difference` as (first, second) slot images.

    The first slot receives q itself; the second receives the negated
    bilinear scatter of q along the flow.
    """
    q = np.asarray(q, dtype=np.float64)
    pos = grid_positions(*q.shape[:2]) + flow
    buf = np.zeros_like(q)
    scatter_bilinear(q, pos, buf)
    return q, -buf


def _project_unit(v):
    # Component-wise v / max(1, |v|), i.e. clipping onto [-1, 1].
    return np.clip(v, -1.0, 1.0)


def dual_update_spatial(s, latent, eta):
    """Ascend the latent-TV dual: proj(s + eta * grad L)."""
    return _project_unit(s + eta * gradient(latent))


def dual_update_temporal(q, a, b, flow, mu, eta):
    """Ascend one directed temporal dual: proj(q + eta*mu*(a - b(x+u)))."""
    return _project_unit(q + eta * mu * temporal_difference(a, b, flow))


def primal_update_latent(
    latent, center, blurry, fwd, bwd, blur_params, lam, eps, cg_iters, cg_tol
):
    """Solve the proximal step of the restoration primal update.

    Minimizes ``lam * sum_d ||d(K L - B)||^2 + ||L - center||^2 / (2 eps)``
    by CG on ``(2 lam K^T D K + I/eps) L = 2 lam K^T D B + center/eps`` with
    ``D = dx^T dx + dy^T dy``, warm-started at ``latent``.

    Raises :class:`CGDivergenceError` if the residual norm becomes non-finite
    or exceeds 1e3x its initial value.  (Plain CG residual norms are allowed
    to oscillate on ill-conditioned systems, so growth alone is not treated
    as divergence.)
    """
    center = np.asarray(center, dtype=np.float64)
    if lam == 0.0:
        return center.copy()

    from .core import dx, dxT, dy, dyT  # local alias for readability

    def second_order(v):
        return dxT(dx(v)) + dyT(dy(v))

    def matvec(v):
        kv = apply_blur(v, fwd, bwd, blur_params)
        return 2.0 * lam * apply_blur_adjoint(second_order(kv), fwd, bwd, blur_params) + v / eps

    rhs = (
        2.0 * lam * apply_blur_adjoint(second_order(np.asarray(blurry, dtype=np.float64)), fwd, bwd, blur_params)
        + center / eps
    )

    x = np.array(latent, dtype=np.float64)
    r = rhs - matvec(x)
    p = r.copy()
    rs = float(np.vdot(r, r))
    stop = cg_tol * max(float(np.linalg.norm(rhs)), 1e-300)
    blowup = 1e3 * max(np.sqrt(rs), stop)
    for _ in range(cg_iters):
        if np.sqrt(rs) <= stop:
            break
        ap = matvec(p)
        denom = float(np.vdot(p, ap))
        if denom <= 0.0:
            raise CGDivergenceError("CG lost positive-definiteness")
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.vdot(r, r))
        norm = np.sqrt(rs_new)
        if not np.isfinite(norm) or norm > blowup:
            raise CGDivergenceError("CG residual norm diverged")
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def restore_latent(state, duals, params):
    """Run ``params.pd_iters`` primal-dual sweeps over all frames in place.

    Flows (including composed ones) are frozen at entry.  After every sweep
    the restoration objective is evaluated; the best iterate is kept, so the
    objective at exit never exceeds its entry value.  Returns the objective
    value at exit.
    """
    eta, eps = params.latent_step_sizes()
    mu = params.mu_value
    t = state.num_frames
    offsets = {
        i: (state.valid_offsets(i, params.n_neighbors) if params.temporal_enabled else [])
        for i in range(t)
    }
    flows = {(i, n): state.flow_to(i, n) for i in range(t) for n in offsets[i]}
    bps = [frame_blur_params(state, i, params) for i in range(t)]

    best_energy = restoration_energy(state, params)
    best = [img.copy() for img in state.latent]

    for _ in range(params.pd_iters):
        for i in range(t):
            duals.s[i] = dual_update_spatial(duals.s[i], state.latent[i], eta)
            for n in offsets[i]:
                duals.q[(i, n)] = dual_update_temporal(
                    duals.q[(i, n)],
                    state.latent[i],
                    state.latent[i + n],
                    flows[(i, n)],
                    mu,
                    eta,
                )
            slot = divergence_adjoint(duals.s[i])
            for n in offsets[i]:
                slot = slot + mu * duals.q[(i, n)]
            # Reactions: every directed pair (donor, n) with donor + n == i
            # scatters its dual back onto frame i.  The valid offsets of the
            # donor differ from those of i near the sequence ends, so this
            # loop runs over the full neighbourhood, not offsets[i].
            for n in range(-params.n_neighbors, params.n_neighbors + 1):
                donor = i - n
                if n == 0 or (donor, n) not in duals.q:
                    continue
                _, second = temporal_difference_adjoint(
                    duals.q[(donor, n)], flows[(donor, n)]
                )
                slot = slot + mu * second
            center = state.latent[i] - eps * slot
            state.latent[i] = primal_update_latent(
                state.latent[i],
                center,
                state.blurry[i],
                state.fwd[i],
                state.bwd[i],
                bps[i],
                params.lam,
                eps,
                params.cg_iters,
                params.cg_tol,
            )
        e = restoration_energy(state, params)
        if e < best_energy:
            best_energy = e
            best = [img.copy() for img in state.latent]

    state.latent = [img.copy() for img in best]
    return best_energy
