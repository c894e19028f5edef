"""Image/flow primitives: sampling, warping, derivatives, solver config."""

import math

import numpy as np
import pytest

from flowdeblur.core import (
    FLOW_HOP_PX,
    DualState,
    SequenceState,
    SolverParams,
    as_image,
    check_flow,
    compose_flow,
    derivative_filters,
    divergence_adjoint,
    dx,
    dxT,
    dy,
    dyT,
    gradient,
    grid_positions,
    sample_bilinear,
    sample_bilinear_grad,
    scatter_bilinear,
    warp_image,
    zero_flow,
)


def test_as_image_accepts_gray_and_rgb():
    g = as_image(np.zeros((4, 5)))
    assert g.dtype == np.float64 and g.shape == (4, 5)
    c = as_image(np.zeros((4, 5, 3), dtype=np.float32))
    assert c.dtype == np.float64 and c.shape == (4, 5, 3)
    assert as_image(np.zeros((4, 5, 1))).shape == (4, 5, 1)


def test_as_image_rejects_bad_inputs():
    with pytest.raises(ValueError):
        as_image(np.zeros((4, 5, 2)))
    with pytest.raises(ValueError):
        as_image(np.zeros(7))
    bad = np.zeros((3, 3))
    bad[1, 1] = np.nan
    with pytest.raises(ValueError):
        as_image(bad)


def test_zero_flow_and_check_flow():
    f = zero_flow(3, 4)
    assert f.shape == (3, 4, 2) and f.dtype == np.float64
    assert check_flow(f, (3, 4)) is not None
    with pytest.raises(ValueError):
        check_flow(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        check_flow(f, (4, 3))
    f[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        check_flow(f)


def test_grid_positions_are_xy_pairs():
    g = grid_positions(2, 3)
    assert g.shape == (2, 3, 2)
    assert tuple(g[0, 1]) == (1.0, 0.0)
    assert tuple(g[1, 0]) == (0.0, 1.0)
    assert tuple(g[1, 2]) == (2.0, 1.0)


def test_sample_bilinear_lattice_identity():
    rng = np.random.default_rng(0)
    img = rng.random((5, 7))
    pos = grid_positions(5, 7)
    assert np.array_equal(sample_bilinear(img, pos), img)


def test_sample_bilinear_hand_value():
    # one row, two pixels [0, 1]: a quarter of the way across reads 0.25
    img = np.array([[0.0, 1.0]])
    val = sample_bilinear(img, np.array([[[0.25, 0.0]]]))
    assert val.shape == (1, 1)
    assert val[0, 0] == pytest.approx(0.25, abs=1e-15)


def test_sample_bilinear_preserves_constants():
    rng = np.random.default_rng(1)
    img = np.full((6, 6), 0.37)
    pos = rng.uniform(-2.0, 8.0, size=(10, 10, 2))
    np.testing.assert_allclose(sample_bilinear(img, pos), 0.37, atol=1e-12)


def test_sample_bilinear_linear_in_image():
    rng = np.random.default_rng(2)
    a, b = rng.random((5, 5)), rng.random((5, 5))
    pos = rng.uniform(0, 4, size=(8, 8, 2))
    lhs = sample_bilinear(0.3 * a + 1.7 * b, pos)
    rhs = 0.3 * sample_bilinear(a, pos) + 1.7 * sample_bilinear(b, pos)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_sample_bilinear_clamps_to_edge():
    img = np.arange(12, dtype=np.float64).reshape(3, 4)
    far = np.array([[[-5.0, -5.0], [100.0, 100.0]]])
    vals = sample_bilinear(img, far)
    assert vals[0, 0] == img[0, 0]
    assert vals[0, 1] == img[-1, -1]


def test_sample_bilinear_grad_matches_fd_inside_cells():
    rng = np.random.default_rng(3)
    img = rng.random((6, 8))
    pos = np.stack(
        [rng.uniform(0.2, 6.8, (5, 5)), rng.uniform(0.2, 4.8, (5, 5))], axis=-1
    )
    pos = np.floor(pos) + rng.uniform(0.2, 0.8, pos.shape)  # keep off the lattice
    val, gx, gy = sample_bilinear_grad(img, pos)
    np.testing.assert_allclose(val, sample_bilinear(img, pos), atol=1e-14)
    h = 1e-6
    for axis, g in ((0, gx), (1, gy)):
        dp = np.zeros_like(pos)
        dp[..., axis] = h
        fd = (sample_bilinear(img, pos + dp) - sample_bilinear(img, pos - dp)) / (2 * h)
        np.testing.assert_allclose(g, fd, atol=1e-8)


def test_sample_bilinear_grad_symmetric_on_lattice():
    # on a lattice line the kink derivative is the mean of both cell slopes
    rng = np.random.default_rng(4)
    img = rng.random((6, 6))
    pos = grid_positions(6, 6)
    _, gx, gy = sample_bilinear_grad(img, pos)
    interior = (slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(
        gx[interior], 0.5 * (img[1:-1, 2:] - img[1:-1, :-2]), atol=1e-14
    )
    np.testing.assert_allclose(
        gy[interior], 0.5 * (img[2:, 1:-1] - img[:-2, 1:-1]), atol=1e-14
    )
    # at the left border the outside cell is flat, so only half the right slope
    np.testing.assert_allclose(
        gx[1:-1, 0], 0.5 * (img[1:-1, 1] - img[1:-1, 0]), atol=1e-14
    )


def test_scatter_bilinear_adjoint_of_sample():
    rng = np.random.default_rng(5)
    img = rng.random((7, 6))
    pos = rng.uniform(-1, 8, size=(4, 9, 2))
    v = rng.random((4, 9))
    lhs = float(np.sum(sample_bilinear(img, pos) * v))
    out = scatter_bilinear(v, pos, np.zeros_like(img))
    rhs = float(np.sum(img * out))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_warp_identity_cases():
    rng = np.random.default_rng(6)
    img = rng.random((5, 5, 3))
    assert np.array_equal(warp_image(img, zero_flow(5, 5)), img)
    flow = rng.normal(size=(5, 5, 2))
    assert np.array_equal(warp_image(img, flow, t=0.0), img)


def test_warp_constant_shift_on_ramp():
    ramp = np.tile(np.arange(6, dtype=np.float64) * 0.1, (4, 1))
    out = warp_image(ramp, np.full((4, 6, 2), [1.0, 0.0]))
    np.testing.assert_allclose(out[:, :-1], ramp[:, 1:], atol=1e-15)
    np.testing.assert_allclose(out[:, -1], ramp[:, -1], atol=1e-15)  # clamped


def test_compose_flow_second_zero_is_identity():
    rng = np.random.default_rng(7)
    u = rng.normal(size=(5, 5, 2))
    assert np.array_equal(compose_flow(u, zero_flow(5, 5)), u)


def test_compose_flow_constant_translations():
    a = np.full((4, 4, 2), [1.0, 0.0])
    b = np.full((4, 4, 2), [2.0, 0.0])
    assert np.array_equal(compose_flow(a, b), np.full((4, 4, 2), [3.0, 0.0]))


def test_compose_flow_rotation_then_constant():
    # with a constant second field the composition is just a vector sum
    pos = grid_positions(4, 4)
    c = pos - np.array([1.5, 1.5])
    rot = np.stack([-0.3 * c[..., 1], 0.3 * c[..., 0]], axis=-1)
    const = np.full((4, 4, 2), [0.5, -0.25])
    np.testing.assert_allclose(compose_flow(rot, const), rot + const, atol=1e-12)


def test_dx_dy_stencils():
    assert not dx(np.full((3, 4), 0.8)).any()
    assert not dy(np.full((3, 4), 0.8)).any()
    ramp = np.tile(np.arange(5, dtype=np.float64) * 0.3, (3, 1))
    gx = dx(ramp)
    np.testing.assert_allclose(gx[:, :-1], 0.3, atol=1e-15)
    assert not gx[:, -1].any()
    assert not dy(ramp).any()
    two = np.array([[0.0, 1.0], [0.0, 1.0]])
    np.testing.assert_array_equal(dx(two), [[1.0, 0.0], [1.0, 0.0]])
    assert not dy(two).any()
    vramp = np.tile((np.arange(4, dtype=np.float64) * 0.5)[:, None], (1, 3))
    assert not dx(vramp).any()
    np.testing.assert_allclose(dy(vramp)[:-1], 0.5, atol=1e-15)


def test_derivative_adjoint_identities():
    rng = np.random.default_rng(8)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert np.sum(dx(a) * b) == pytest.approx(np.sum(a * dxT(b)), abs=1e-10)
    assert np.sum(dy(a) * b) == pytest.approx(np.sum(a * dyT(b)), abs=1e-10)
    s = rng.random((2, 8, 8))
    assert np.sum(gradient(a) * s) == pytest.approx(
        np.sum(a * divergence_adjoint(s)), abs=1e-10
    )


def test_derivative_filters_bank():
    rng = np.random.default_rng(9)
    img = rng.random((5, 6))
    fx, fy = derivative_filters(img)
    np.testing.assert_array_equal(fx, dx(img))
    np.testing.assert_array_equal(fy, dy(img))
    for d in derivative_filters(np.full((4, 4), 0.2)):
        assert not d.any()


def test_solver_params_defaults():
    p = SolverParams().validate()
    assert p.mu_value == p.lam == 250.0
    assert p.nu_value == pytest.approx(0.08 * 250.0)
    assert p.temporal_weight(1) == p.mu_value
    assert p.temporal_weight(0) == 0.0
    q = SolverParams(lam=100.0, mu=7.0, nu=2.0)
    assert q.mu_value == 7.0 and q.nu_value == 2.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lam": -1.0},
        {"mu": -0.5},
        {"nu": 0.0},
        {"sigma_i": 0.0},
        {"sigma_w": -1.0},
        {"n_neighbors": -1},
        {"pyr_scale": 1.0},
        {"pyr_levels": 0},
        {"pd_iters": 0},
        {"blur_samples": 0},
        {"duty": 0.0},
        {"duty": 1.5},
        {"eps_u": -0.1},
    ],
)
def test_solver_params_validate_rejects(kwargs):
    with pytest.raises(ValueError):
        SolverParams(**kwargs).validate()


def test_latent_step_sizes_operator_bound():
    p = SolverParams(lam=10.0, mu=3.0, n_neighbors=2)
    eta, eps = p.latent_step_sizes()
    bound = 8.0 + 2.0 * 4 * 3.0**2
    assert eta == eps == pytest.approx(1.0 / math.sqrt(bound))
    off = SolverParams(temporal_enabled=False)
    assert off.latent_step_sizes()[0] == pytest.approx(1.0 / math.sqrt(8.0))
    custom = SolverParams(eta_l=0.01, eps_l=0.02)
    assert custom.latent_step_sizes() == (0.01, 0.02)


def test_flow_step_sizes_and_hop_cap():
    p = SolverParams(mu=10.0, nu=0.8)
    edge = np.full((4, 4), 0.5)
    eta, eps = p.flow_step_sizes(edge)
    assert eta == eps == pytest.approx(1.0 / (math.sqrt(8.0) * 0.5))
    # a gradient bound caps the primal stride at FLOW_HOP_PX pixels
    eta2, eps2 = p.flow_step_sizes(edge, grad_bound=0.4)
    assert eta2 == eta
    assert eps2 == pytest.approx(min(eps, FLOW_HOP_PX / (10.0 * 0.4)))
    assert eta2 * eps2 * 8.0 * 0.5**2 <= 1.0 + 1e-12
    # an explicit primal step disables the cap
    forced = SolverParams(mu=10.0, eps_u=0.9)
    assert forced.flow_step_sizes(edge, grad_bound=100.0)[1] == 0.9


def _state(t=3, h=6, w=5, duty=0.8):
    rng = np.random.default_rng(42)
    frames = [rng.random((h, w)) for _ in range(t)]
    return SequenceState(
        blurry=frames,
        latent=[f.copy() for f in frames],
        fwd=[zero_flow(h, w) for _ in range(t)],
        bwd=[zero_flow(h, w) for _ in range(t)],
        duty=[duty] * t,
    )


def test_sequence_state_validate():
    st = _state()
    assert st.validate() is st
    assert st.num_frames == 3 and st.frame_shape == (6, 5)
    bad = _state()
    bad.duty[1] = 0.0
    with pytest.raises(ValueError):
        bad.validate()
    short = _state()
    short.fwd = short.fwd[:-1]
    with pytest.raises(ValueError):
        short.validate()


def test_sequence_state_offsets_and_unit_flows():
    st = _state(t=4)
    assert st.valid_offsets(0, 2) == [1, 2]
    assert st.valid_offsets(2, 2) == [-2, -1, 1]
    assert st.valid_offsets(3, 1) == [-1]
    assert st.unit_flow(1, 1) is st.fwd[1]
    assert st.unit_flow(1, -1) is st.bwd[1]
    with pytest.raises(ValueError):
        st.unit_flow(1, 2)


def test_flow_to_composes_unit_flows():
    st = _state(t=3, h=5, w=5)
    st.fwd[0] = np.full((5, 5, 2), [1.5, -0.75])
    st.fwd[1] = np.full((5, 5, 2), [2.25, 0.5])
    assert not st.flow_to(1, 0).any()
    two = st.flow_to(0, 2)
    assert np.array_equal(two, np.full((5, 5, 2), [3.75, -0.25]))
    with pytest.raises(ValueError):
        st.flow_to(1, 2)


def test_dual_state_zeros_layout():
    st = _state(t=3, h=4, w=4)
    p = SolverParams(n_neighbors=2)
    duals = DualState.zeros(st, p)
    assert len(duals.s) == 3 and duals.s[0].shape == (2, 4, 4)
    assert set(duals.q) == {
        (0, 1), (0, 2), (1, -1), (1, 1), (2, -2), (2, -1),
    }
    assert set(duals.p) == {(0, 1), (1, -1), (1, 1), (2, -1)}
    assert duals.p[(0, 1)].shape == (2, 4, 4, 2)
    off = DualState.zeros(st, SolverParams(temporal_enabled=False))
    assert off.q == {}
    assert duals.check_bounds()
    duals.s[0][0, 0, 0] = 1.5
    with pytest.raises(AssertionError):
        duals.check_bounds()
