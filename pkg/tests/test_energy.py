"""Objective terms: data fidelity, temporal coupling, TV, edge weights."""

import math

import numpy as np
import pytest

from flowdeblur.core import SequenceState, SolverParams, zero_flow
from flowdeblur.energy import (
    breakdown,
    data_energy,
    edge_map,
    flow_tv_energy,
    frame_blur_params,
    latent_tv_energy,
    restoration_energy,
    temporal_energy,
)
from flowdeblur.evalkit import demo_scene, render_scene, synthesize_blur


def _state(latent, blurry=None, fwd=None, bwd=None, duty=1.0):
    t = len(latent)
    h, w = latent[0].shape[:2]
    return SequenceState(
        blurry=[f.copy() for f in (blurry or latent)],
        latent=[f.copy() for f in latent],
        fwd=fwd or [zero_flow(h, w) for _ in range(t)],
        bwd=bwd or [zero_flow(h, w) for _ in range(t)],
        duty=[duty] * t,
    ).validate()


def test_edge_map_constant_and_calibrated_step():
    nu, si = 0.8, 0.1
    np.testing.assert_allclose(edge_map(np.full((5, 5), 0.3), nu, si), nu, atol=1e-15)
    img = np.zeros((4, 6))
    img[:, 3:] = si  # one column of gradient magnitude exactly sigma_i
    g = edge_map(img, nu, si)
    np.testing.assert_allclose(g[:, 2], nu * math.exp(-1.0), atol=1e-14)
    np.testing.assert_allclose(np.delete(g, 2, axis=1), nu, atol=1e-15)


def test_edge_map_range_and_channel_sum():
    rng = np.random.default_rng(30)
    img = rng.random((8, 8, 3))
    g = edge_map(img, 0.5, 25 / 255)
    assert g.shape == (8, 8)
    assert np.all(g > 0.0) and np.all(g <= 0.5)


def test_frame_blur_params_per_frame_duty_and_samples():
    frames = [np.zeros((4, 4))] * 2
    fwd = [np.full((4, 4, 2), [3.0, 0.0])] * 2
    bwd = [np.full((4, 4, 2), [-3.0, 0.0])] * 2
    st = _state(frames, fwd=fwd, bwd=bwd, duty=0.5)
    st.duty = [0.5, 0.8]
    auto = SolverParams()
    bp0 = frame_blur_params(st, 0, auto)
    assert (bp0.tau, bp0.samples) == (0.5, 2)
    bp1 = frame_blur_params(st, 1, auto)
    assert (bp1.tau, bp1.samples) == (0.8, 3)
    fixed = SolverParams(blur_samples=7)
    assert frame_blur_params(st, 1, fixed).samples == 7


def test_perfect_constant_state_has_zero_energy():
    st = _state([np.full((6, 6), 0.4)] * 3)
    b = breakdown(st, SolverParams())
    assert (b.data, b.temporal, b.tv_latent, b.tv_flow) == (0.0, 0.0, 0.0, 0.0)
    assert b.total == 0.0


def test_data_energy_of_interior_impulse():
    lam = 100.0
    base = np.full((8, 8), 0.5)
    latent = base.copy()
    latent[4, 4] += 0.1  # K = identity at zero flow, so residual is the impulse
    st = _state([latent, base], blurry=[base, base])
    params = SolverParams(lam=lam, blur_samples=2)
    # the impulse hits each derivative filter twice with slope 0.1
    assert data_energy(st, params) == pytest.approx(lam * 4 * 0.1**2, rel=1e-12)
    assert data_energy(st, SolverParams(lam=0.0, blur_samples=2)) == 0.0


def test_temporal_energy_of_constant_offset():
    h = w = 5
    st = _state([np.zeros((h, w)), np.full((h, w), 0.2)])
    params = SolverParams(mu=3.0, n_neighbors=1)
    # both directed pairs see the same |0.2| residual at every pixel
    assert temporal_energy(st, params) == pytest.approx(2 * 3.0 * 0.2 * h * w, rel=1e-12)
    assert temporal_energy(st, SolverParams(temporal_enabled=False)) == 0.0
    assert temporal_energy(st, SolverParams(n_neighbors=0)) == 0.0


def test_latent_tv_of_ramp():
    ramp = np.tile(np.arange(5, dtype=np.float64) * 0.3, (4, 1))
    st = _state([ramp, ramp])
    assert latent_tv_energy(st) == pytest.approx(2 * 4 * 4 * 0.3, rel=1e-12)


def test_flow_tv_weights_and_fallback():
    h = w = 4
    ramp_flow = zero_flow(h, w)
    ramp_flow[..., 0] = 0.5 * np.arange(w)
    st = _state([np.zeros((h, w))] * 2, fwd=[ramp_flow, zero_flow(h, w)])
    ones = [np.ones((h, w))] * 2
    params = SolverParams(mu=1.0, n_neighbors=1)
    # only the (0 -> 1) flow varies: h rows x (w-1) jumps of 0.5
    assert flow_tv_energy(st, params, ones) == pytest.approx(h * (w - 1) * 0.5, rel=1e-12)
    halves = [np.full((h, w), 0.5)] * 2
    assert flow_tv_energy(st, params, halves) == pytest.approx(0.5 * h * (w - 1) * 0.5, rel=1e-12)
    # with the temporal term off the unit flows are still regularized
    off = SolverParams(temporal_enabled=False)
    assert flow_tv_energy(st, off, ones) == pytest.approx(h * (w - 1) * 0.5, rel=1e-12)


def test_breakdown_groupings():
    rng = np.random.default_rng(31)
    frames = [rng.random((7, 7)) for _ in range(3)]
    fwd = [rng.normal(0.0, 0.5, (7, 7, 2)) for _ in range(3)]
    bwd = [rng.normal(0.0, 0.5, (7, 7, 2)) for _ in range(3)]
    st = _state(frames, blurry=[rng.random((7, 7)) for _ in range(3)], fwd=fwd, bwd=bwd, duty=0.8)
    params = SolverParams(mu=5.0, nu=0.8, blur_samples=3)
    b = breakdown(st, params)
    assert b.spatial == b.tv_latent + b.tv_flow
    assert b.restoration == (b.data + b.temporal) + b.tv_latent
    assert b.total == b.restoration + b.tv_flow
    assert restoration_energy(st, params) == b.restoration
    assert b.data == pytest.approx(data_energy(st, params), rel=1e-12)


def test_doubling_lambda_scales_data_term_only():
    rng = np.random.default_rng(32)
    frames = [rng.random((6, 6)) for _ in range(2)]
    st = _state(frames, blurry=[rng.random((6, 6)) for _ in range(2)], duty=0.7)
    one = breakdown(st, SolverParams(lam=100.0, mu=5.0, nu=0.8, blur_samples=2))
    two = breakdown(st, SolverParams(lam=200.0, mu=5.0, nu=0.8, blur_samples=2))
    assert two.data == pytest.approx(2 * one.data, rel=1e-12)
    assert two.temporal == one.temporal
    assert two.tv_latent == one.tv_latent
    assert two.tv_flow == one.tv_flow


def test_ground_truth_beats_blurry_zero_flow_init():
    scene = render_scene(demo_scene())
    blurry = synthesize_blur(scene.sharp, scene.gt_fwd, scene.gt_bwd, scene.tau)
    t = len(blurry)
    h, w = blurry[0].shape[:2]
    params = SolverParams(mu=10.0, nu=0.8, n_neighbors=1)
    gt = _state(scene.sharp, blurry=blurry, fwd=scene.gt_fwd, bwd=scene.gt_bwd, duty=scene.tau)
    init = _state(blurry, blurry=blurry, duty=scene.tau)
    e_gt = breakdown(gt, params).total
    e_init = breakdown(init, params).total
    assert e_gt == pytest.approx(5524.55, rel=1e-3)
    assert e_init == pytest.approx(27324.05, rel=1e-3)
    assert e_gt < e_init
    assert breakdown(gt, SolverParams()).total < breakdown(init, SolverParams()).total
