import math
from fractions import Fraction

import numpy as np
import pytest

from mhdconvex.building_blocks import (IterParams, ShearFlows, h_quadrature_error,
                                       make_profiles, profile_normalization, shear_normalization,
                                       support_overlap, temporal_blocks, temporal_normalization,
                                       verify_lp_scaling, verify_time_scaling)
from mhdconvex.geometry import build_geometric_basis
from mhdconvex.torus_spectral import torus

TOY = dict(lam=8, r_perp=1 / 8, tau=4, sigma=2, ell=0.2, varsigma=0.2, delta_next=20.0)


@pytest.fixture(scope="module")
def params():
    return IterParams(overrides=TOY)


@pytest.fixture(scope="module")
def flows(params):
    return ShearFlows(build_geometric_basis(), params, 32)


@pytest.fixture(scope="module")
def blocks(params):
    return temporal_blocks(build_geometric_basis(), params)


def test_ladder_values():
    # a = 2, b = 10: lambda_0 = 2, lambda_1 = 1024 and every derived quantity is exact
    p = IterParams(a=2, b=10, beta=0.5)
    assert p.lambda_q == pytest.approx(2.0)
    assert p.lam == pytest.approx(1024.0)
    assert p.delta_q == pytest.approx(1024 ** 1.5 * 2.0 ** -1.0)
    assert p.tau == pytest.approx(1024.0 ** 2)
    assert p.sigma == pytest.approx(2.0)
    assert p.r_perp == pytest.approx(1 / 32)
    assert p.ell == pytest.approx(2.0 ** -60)
    assert p.varsigma == pytest.approx(2.0 ** -30)
    with pytest.raises(ValueError):
        IterParams(overrides=dict(bogus=1))


def test_toy_validation():
    with pytest.raises(ValueError):
        IterParams(overrides={**TOY, "r_perp": 1.5})
    with pytest.raises(ValueError):
        IterParams(overrides={**TOY, "r_perp": 0.3})  # lambda r_perp not an integer
    with pytest.raises(ValueError):
        IterParams(overrides={**TOY, "sigma": 1.5})


def test_strict_constraints():
    with pytest.raises(ValueError, match="b > 16000/eps"):
        IterParams(strict=True)
    p = IterParams(overrides=TOY)
    errs = p.strict_violations()
    assert any("a >=" in e for e in errs) and any("beta" in e for e in errs)
    # the ladder stays finite in logs even for astronomically large exponents
    big = IterParams(a=2, b=400000, beta=Fraction(5, 2 * 400000 ** 2), eps=Fraction(1, 20), overrides=TOY)
    assert math.isfinite(big.log_lambda(3))


def test_profile_normalization_and_mean():
    prof = make_profiles()
    assert profile_normalization() == pytest.approx(1.0, abs=1e-8)
    assert profile_normalization(prof, 0.25) == pytest.approx(1.0, abs=1e-8)
    # independent trapezoid oracle on a fine grid
    y = np.linspace(-1, 1, 2 ** 18 + 1)
    phi = prof.phi(y)
    assert np.trapezoid(phi ** 2, y) / (2 * np.pi) == pytest.approx(1.0, abs=1e-8)
    assert abs(np.trapezoid(phi, y)) < 1e-10
    assert np.all(prof.Phi(np.array([-1.0, 1.0, 1.5])) == 0)


def test_phi_is_minus_second_derivative():
    prof = make_profiles()
    y, Phi, phi = prof.samples()
    h = y[1] - y[0]
    # fourth-order central stencil
    fd = -(-Phi[4:] + 16 * Phi[3:-1] - 30 * Phi[2:-2] + 16 * Phi[1:-3] - Phi[:-4]) / (12 * h ** 2)
    assert np.max(np.abs(fd - phi[2:-2])) < 1e-6


def test_shear_flows_basic(flows, params):
    T = torus(flows.n)
    for i in range(len(flows.frames)):
        W = flows.W(i)
        assert abs(W.mean()) < 1e-12
        k1 = flows.vectors(i)[0]
        # W is parallel to k1 at every point
        cross = np.cross(W, k1[:, None, None, None], axis=0)
        assert np.max(np.abs(cross)) < 1e-12
        assert np.max(np.abs(T.ifft(T.div_s(T.fft(W))))) < 1e-10
        if flows.is_magnetic(i):
            assert np.max(np.abs(T.ifft(T.div_s(T.fft(flows.D(i)))))) < 1e-10


def test_shear_normalization(flows):
    assert max(abs(x - 1) for x in shear_normalization(flows)) < 1e-8


def test_corrector_potential_scaling(flows):
    # -Delta W^c = W on the grid (profile is an exact trigonometric polynomial)
    T = torus(flows.n)
    for i in (0, 7):
        lap = T.ifft(T.k2 * T.fft(flows.Wc(i)))
        assert np.max(np.abs(lap - flows.W(i))) < 1e-10 * np.max(np.abs(flows.W(i)))


def test_periodization_shift(flows, params):
    # phi_(k) depends on x only through m.x, m = lambda r_perp N_Lambda k
    i = 0
    m = flows.m[i]
    prof = flows.profile(i)
    # shifting along N_Lambda k1 (orthogonal to k, an integer vector) leaves it invariant
    k1 = np.array([int(round(3 * float(c))) for c in flows.frames[i].k1])
    assert np.dot(m, k1) == 0
    rolled = np.roll(prof, shift=tuple(-int(c) for c in k1), axis=(0, 1, 2))
    assert np.max(np.abs(rolled - prof)) < 1e-10


def test_unresolved_flows_rejected(params):
    with pytest.raises(ValueError):
        ShearFlows(build_geometric_basis(), params, 8)


def test_lp_scaling_rows():
    rows = verify_lp_scaling()
    assert all(r["pass"] for r in rows), rows
    by = {r["quantity"]: r["measured"] for r in rows}
    assert by["phi_lp_slope_p=2"] == pytest.approx(0.0, abs=0.1)
    assert by["phi_lp_slope_p=1"] == pytest.approx(0.5, abs=0.1)
    assert by["phi_lp_slope_p=inf"] == pytest.approx(-0.5, abs=0.1)
    with pytest.raises(ValueError):
        verify_lp_scaling(r_perp_sweep=(1 / 8, 1 / 16))


def test_time_scaling_rows():
    rows = verify_time_scaling()
    assert all(r["pass"] for r in rows), rows


def test_temporal_normalization_and_disjointness(blocks):
    assert max(abs(x - 1) for x in temporal_normalization(blocks)) < 1e-8
    assert support_overlap(blocks) == 0.0


def test_temporal_normalization_trapezoid_oracle(blocks):
    t = np.linspace(0, blocks.T, 2 ** 19 + 1)
    for i in (0, 11):
        g2 = blocks.g(i, t) ** 2
        assert np.trapezoid(g2, t) / blocks.T == pytest.approx(1.0, abs=1e-6)


def test_h_matches_quadrature(blocks, params):
    ts = np.linspace(0, 0.999 * params.T / params.sigma, 9)
    assert h_quadrature_error(blocks, ts, frames=(0, 4, 11)) < 1e-8
    # and an independent trapezoid oracle on a fine grid
    t = np.linspace(0, 0.4, 2 ** 17 + 1)
    g2 = blocks.g(3, t) ** 2
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (g2[1:] + g2[:-1]) * np.diff(t))]) - t
    for j in (2 ** 15, 2 ** 16, 2 ** 17):
        assert blocks.h(3, t[j]) == pytest.approx(params.sigma * cum[j], abs=1e-5)


def test_h_bounded(blocks):
    t = blocks.fine_time_grid(8)[::7]
    assert max(abs(blocks.h(0, x)) for x in t) <= 1.0 + 1e-12
