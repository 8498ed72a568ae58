import numpy as np
import pytest

from mhdconvex.amplitudes import (build_amplitudes, chi, chi_d, frob, g_b_matrix, identity_magnetic,
                                  identity_residual, identity_velocity, magnetic_amplitudes,
                                  normalizer, smooth_step, theta_cutoff, velocity_amplitudes)
from mhdconvex.building_blocks import IterParams, ShearFlows, temporal_blocks
from mhdconvex.cli_io.commands import random_stresses
from mhdconvex.geometry import build_geometric_basis
from mhdconvex.torus_spectral import torus

TOY = dict(lam=8, r_perp=1 / 8, tau=4, sigma=2, ell=0.2, varsigma=0.2, delta_next=20.0)
DELTA = 20.0


@pytest.fixture(scope="module")
def basis():
    return build_geometric_basis()


@pytest.fixture(scope="module")
def setup(basis):
    params = IterParams(overrides=TOY)
    n = 32
    return torus(n), ShearFlows(basis, params, n), temporal_blocks(basis, params), params


def test_chi_values_and_envelope():
    assert chi(0.5) == 1.0 and chi(0.0) == 1.0
    assert chi(3.0) == 3.0
    # symmetric smooth step: the midpoint value is exact
    assert chi(1.5) == pytest.approx(1.25, abs=1e-15)
    z = np.linspace(1, 2, 10001)
    c = chi(z)
    assert np.all(c >= 0.5 * z - 1e-15) and np.all(c <= 2 * z + 1e-15)
    assert np.all(chi(np.linspace(0, 5, 1001)) >= 1.0)
    with pytest.raises(ValueError):
        chi(-0.1)


def test_chi_derivative_matches_fd():
    z = np.linspace(0.2, 2.8, 53)
    h = 1e-6
    fd = (chi(z + h) - chi(z - h)) / (2 * h)
    assert np.max(np.abs(fd - chi_d(z))) < 1e-7


def test_theta_cutoff():
    assert theta_cutoff(0.04, 0.1) == 0.0
    assert theta_cutoff(0.1, 0.1) == 1.0
    assert 0 < theta_cutoff(0.075, 0.1) < 1
    assert smooth_step(0.5) == pytest.approx(0.5, abs=1e-15)


def test_magnetic_center_and_branches(basis):
    R = np.zeros((3, 3, 2, 2, 2))
    rho, sq, _ = magnetic_amplitudes(R, DELTA, basis)
    assert np.allclose(rho, 2 * DELTA / basis.eps_b, rtol=1e-15)
    for f, a2 in zip(basis.lambda_b, sq):
        assert np.allclose(a2, rho * float(f.center), rtol=1e-15)
    A = np.zeros((3, 3))
    A[0, 1], A[1, 0] = 1.0, -1.0
    A *= 10 * DELTA / np.sqrt(2)
    rho, _, _ = magnetic_amplitudes(A, DELTA, basis)
    assert float(rho) == pytest.approx(20 * DELTA / basis.eps_b, rel=1e-14)


def test_magnetic_domain_scan(basis):
    rng = np.random.default_rng(21)
    A = rng.standard_normal((3, 3, 4000)) * rng.lognormal(3, 2, 4000)
    A = A - np.swapaxes(A, 0, 1)
    rho, sq, _ = magnetic_amplitudes(A, DELTA, basis)
    assert np.all(frob(A) / rho <= basis.eps_b * (1 + 1e-12))
    assert np.all(rho >= DELTA / basis.eps_b)
    assert min(float(np.min(s)) for s in sq) > 0
    with pytest.raises(ValueError):
        magnetic_amplitudes(np.eye(3), DELTA, basis)


def test_g_b_matrix(basis):
    a2 = [np.full((2, 2, 2), 3.0 + i) for i in range(len(basis.lambda_b))]
    G, _ = g_b_matrix(a2, basis)
    want = 0.0
    for i, f in enumerate(basis.lambda_b):
        _, k1, k2 = f.frame.arrays()
        want = want + (3.0 + i) * (np.outer(k1, k1) - np.outer(k2, k2))
    assert np.allclose(G[..., 0, 0, 0], want, atol=1e-14)
    assert abs(np.trace(G[..., 0, 0, 0])) < 1e-12
    Z, _ = g_b_matrix([0 * x for x in a2], basis)
    assert np.max(np.abs(Z)) == 0


def test_velocity_center_and_branches(basis):
    M = np.zeros((3, 3))
    rho, sq, _ = velocity_amplitudes(M, 0.0, DELTA, basis)
    assert float(rho) == pytest.approx(2 * DELTA / basis.eps_u, rel=1e-15)
    for f, a2 in zip(basis.lambda_u, sq):
        assert float(a2) == pytest.approx(float(rho) * float(f.center), rel=1e-14)
    S = np.diag([1.0, -1.0, 0.0]) * 4 * DELTA / np.sqrt(2)
    rho, _, _ = velocity_amplitudes(S, 0.0, DELTA, basis)
    assert float(rho) == pytest.approx(8 * DELTA / basis.eps_u, rel=1e-14)
    with pytest.raises(ValueError):
        velocity_amplitudes(np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0.0]]), 0.0, DELTA, basis)


def test_velocity_domain_scan(basis):
    rng = np.random.default_rng(22)
    S = rng.standard_normal((3, 3, 4000)) * rng.lognormal(3, 2, 4000)
    S = S + np.swapaxes(S, 0, 1)
    rho, sq, _ = velocity_amplitudes(S, 0.0, DELTA, basis)
    assert np.all(frob(S) / rho <= basis.eps_u * (1 + 1e-12))
    assert min(float(np.min(s)) for s in sq) > 0


def test_time_derivatives_match_fd(basis):
    rng = np.random.default_rng(23)
    R0 = rng.standard_normal((3, 3)) * 30
    R0 = R0 + R0.T - 2 * np.trace(R0) / 3 * np.eye(3)
    R1 = rng.standard_normal((3, 3)) * 30
    R1 = R1 + R1.T - 2 * np.trace(R1) / 3 * np.eye(3)
    B0 = rng.standard_normal((3, 3)) * 30
    B0 = B0 - B0.T
    B1 = rng.standard_normal((3, 3)) * 30
    B1 = B1 - B1.T

    def amps(t):
        return build_amplitudes(R0 + t * R1, B0 + t * B1, DELTA, basis, R1, B1)

    h = 1e-5
    mid, lo, hi = amps(0.3), amps(0.3 - h), amps(0.3 + h)
    for d, a, b in zip(mid.da2, lo.a2, hi.a2):
        assert float(d) == pytest.approx(float((b - a) / (2 * h)), rel=1e-6, abs=1e-6)


def test_normalizer_rate_zero_matrix():
    rho, drho = normalizer(np.zeros((3, 3)), 2.0, 0.5, np.ones((3, 3)))
    assert float(rho) == 8.0 and float(drho) == 0.0


def _pulse_times(params):
    count = 12
    w = params.T / (4 * count) / (params.tau * params.sigma)
    base = params.T / count / (params.tau * params.sigma)
    return [0.5 + base + 0.4 * w, 0.5 + 8 * base + 0.55 * w, 0.37]


def test_identities_zero_stress(setup, basis):
    T, flows, blocks, params = setup
    zero = np.zeros((3, 3) + T.shape)
    amps = build_amplitudes(zero, zero, DELTA, basis)
    scale = max(float(np.max(amps.rho_u)), float(np.max(amps.rho_b)))
    for t in _pulse_times(params):
        for fn in (identity_velocity, identity_magnetic):
            r = identity_residual(*fn(T, amps, flows, blocks, zero, t), scale=scale)
            assert r["max_abs"] < 1e-10 * scale


def test_identities_random_stress(setup, basis):
    T, flows, blocks, params = setup
    Ru, Rb = random_stresses(T, np.random.default_rng(24), scale=40.0)
    amps = build_amplitudes(Ru, Rb, DELTA, basis)
    for t in _pulse_times(params):
        for fn, R, rho in ((identity_velocity, Ru, amps.rho_u), (identity_magnetic, Rb, amps.rho_b)):
            r = identity_residual(*fn(T, amps, flows, blocks, R, t), scale=float(np.max(rho)))
            assert r["relative"] < 1e-9


def test_velocity_trace_identity(setup, basis):
    T, flows, blocks, params = setup
    Ru, Rb = random_stresses(T, np.random.default_rng(25), scale=10.0)
    amps = build_amplitudes(Ru, Rb, DELTA, basis)
    t = _pulse_times(params)[0]
    lhs, rhs = identity_velocity(T, amps, flows, blocks, Ru, t)
    # R^u and G^B are trace-free, so tr(rhs) = 3 rho_u + trace of the oscillation terms
    osc = rhs - (amps.rho_u * np.eye(3)[:, :, None, None, None] - (Ru + amps.g_b))
    tr = np.einsum("ii...->...", lhs)
    assert np.max(np.abs(tr - 3 * amps.rho_u - np.einsum("ii...->...", osc))) < 1e-9 * np.max(amps.rho_u)


def test_magnetic_identity_mean_modes(setup, basis):
    # at a time inside a magnetic pulse the x-mean of the lhs is sum a^2 g^2 <phi^2> M
    # because a^2 and phi^2 share no nonzero modes at this resolution
    T, flows, blocks, params = setup
    zero = np.zeros((3, 3) + T.shape)
    amps = build_amplitudes(zero, zero, DELTA, basis)
    t = _pulse_times(params)[1]
    lhs, _ = identity_magnetic(T, amps, flows, blocks, zero, t)
    want = 0.0
    nu = len(basis.lambda_u)
    for j, f in enumerate(basis.lambda_b):
        g2 = float(blocks.g(nu + j, t)) ** 2
        _, k1, k2 = f.frame.arrays()
        want = want + float(np.mean(amps.a2_mag[j])) * g2 * (np.outer(k2, k1) - np.outer(k1, k2))
    assert np.allclose(lhs.mean(axis=(2, 3, 4)), want, atol=1e-10 * np.max(amps.rho_b))


def test_amplitude_l2_bound_shape(basis):
    # ||a||_{L2} / (delta^{1/2} + ||R||_{L1}^{1/2}) stays within a fixed band across input scales
    T = torus(16)
    ratios = []
    for scale, seed in ((1.0, 1), (30.0, 2), (300.0, 3), (3000.0, 4)):
        _, Rb = random_stresses(T, np.random.default_rng(seed), scale=scale)
        rho, sq, _ = magnetic_amplitudes(Rb, DELTA, basis)
        a_l2 = max(np.sqrt((2 * np.pi) ** 3 * np.mean(s)) for s in sq)
        r_l1 = (2 * np.pi) ** 3 * np.mean(frob(Rb))
        ratios.append(a_l2 / (np.sqrt(DELTA) + np.sqrt(r_l1)))
    assert max(ratios) / min(ratios) < 5
