import numpy as np
import pytest

from mhdconvex.cli_io.commands import _pulse_time, build_level0, modal_from_config, noise_state, time_grid
from mhdconvex.cli_io.config import build_params, load
from mhdconvex.convex_step import (Mollifier, causality_fingerprint, corrector_identity, diagnostics,
                                   init_state, level0_oracle_single_mode, near_initial_comparison,
                                   perturbation_invariants, residual_at, residual_check, step,
                                   symmetry_violations)
from mhdconvex.stochastic import altered_after, zero_noise
from mhdconvex.torus_spectral import ModalField, torus


@pytest.fixture(scope="module")
def cfg():
    return load()


@pytest.fixture(scope="module")
def level0(cfg):
    return build_level0(cfg)


@pytest.fixture(scope="module")
def stepped(level0):
    return step(level0, sample_times=level0.times)


def _single_mode(times, amp=1.0):
    return ModalField([[0, 1, 0]], [[-1j, 0, 0]], times, amp * np.sin(np.pi * times)[:, None])


def _quiet(times):
    return ModalField([[1, 0, 0]], [[0, 0, -1j]], times, 0 * times[:, None])


def test_zero_data_gives_zero_stress(cfg):
    params = build_params(cfg, level=0)
    times = np.linspace(0, 1, 9)
    s = init_state(_quiet(times), _quiet(times), zero_noise(times), params, 16)
    for t in (0.0, 0.4):
        Ru, Rb = s.stress(t)
        assert np.max(np.abs(Ru)) == 0 and np.max(np.abs(Rb)) == 0


def test_level0_matches_single_mode_oracle(cfg):
    params = build_params(cfg, level=0)
    times = np.linspace(0, 1, 17)
    v = _single_mode(times)
    s = init_state(v, _quiet(times), zero_noise(times, params.alpha, params.nu), params, 16)
    T = torus(16)
    for t in (0.3, 0.55):
        Ru, Rb = s.stress(t)
        want = level0_oracle_single_mode(v, t, params.alpha, params.nu, 16)
        assert np.max(np.abs(T.ifft(Ru) - want)) < 1e-12 * max(1.0, np.max(np.abs(want)))
        assert np.max(np.abs(T.ifft(Rb))) < 1e-14


def test_level0_residual(level0):
    for t in (0.2, 0.5, 0.9):
        r = residual_at(level0, t)
        assert r["res_u"] < 1e-10 and r["res_b"] < 1e-10


def test_bad_inputs_rejected(cfg, level0):
    params = build_params(cfg, level=0)
    times = np.linspace(0, 1, 9)
    compressive = ModalField([[1, 0, 0]], [[-1j, 0, 0]], times, np.sin(np.pi * times)[:, None])
    with pytest.raises(ValueError, match="divergence"):
        init_state(compressive, _quiet(times), zero_noise(times), params, 16)
    nonzero_start = ModalField([[0, 1, 0]], [[-1j, 0, 0]], times, np.ones((9, 1)))
    with pytest.raises(ValueError, match="vanish"):
        init_state(nonzero_start, _quiet(times), zero_noise(times), params, 16)
    with pytest.raises(ValueError):
        Mollifier(level0.provider.source, 0.01, 32)
    with pytest.raises(ValueError):
        residual_at(level0, 0.001, h=0.01)


def test_perturbation_invariants(stepped, level0):
    t_u, _ = _pulse_time(level0.params, 1, 0.4)
    inv = perturbation_invariants(stepped["step"], t_u)
    for k, v in inv.items():
        if k != "theta":
            assert v < 1e-10, k


def test_curlcurl_identity(stepped, level0):
    t_b, _ = _pulse_time(level0.params, 8, 0.55)
    ci = corrector_identity(stepped["step"], t_b)
    assert max(ci.values()) < 1e-10


def test_near_initial_branch(stepped):
    for t in (0.02, 0.07):
        d = near_initial_comparison(stepped["step"], t)
        assert max(d.values()) < 1e-9, d
    with pytest.raises(ValueError):
        near_initial_comparison(stepped["step"], 0.5)


def test_new_stress_symmetry(stepped, level0):
    new = stepped["new_state"]
    t_u, _ = _pulse_time(level0.params, 1, 0.4)
    Ru, Rb = new.stress(t_u)
    T = torus(new.n)
    scale = max(1.0, float(np.max(np.abs(T.ifft(Ru)))))
    assert max(symmetry_violations(T, Ru, Rb).values()) / scale < 1e-12


def test_step_residual_and_order(stepped, level0):
    new = stepped["new_state"]
    t_u, w = _pulse_time(level0.params, 1, 0.4)
    rc = residual_check(new, [t_u], steps=[w / 32, w / 64, w / 128])
    assert max(rc["res_u"], rc["res_b"]) < 1e-6
    assert rc["orders"][0] == pytest.approx(4.0, abs=0.3)


def test_diagnostics_keys(stepped, level0):
    d = diagnostics(stepped["new_state"], np.linspace(0.25, 0.75, 3), previous=level0)
    for key in ("J", "J_tilde", "decay_ratio", "perturbation", "M", "M_star", "noise_trace"):
        assert key in d
    assert d["level"] == 1 and d["J"] >= 0


def test_step_is_deterministic(cfg, stepped):
    again = step(build_level0(cfg))
    ts = [0.3, 0.52]
    assert causality_fingerprint(again["new_state"], ts) == causality_fingerprint(stepped["new_state"], ts)


def test_causality(cfg, level0, stepped):
    t0 = 0.5
    params = level0.params
    times = time_grid(cfg, params)
    noise = altered_after(noise_state(cfg, params, times), t0, seed=99)
    assert noise.fingerprint() != level0.noise.fingerprint()
    v = modal_from_config(cfg["initial"]["v"], times, params.T)
    h = modal_from_config(cfg["initial"]["h"], times, params.T)
    other = init_state(v, h, noise, params, level0.n)
    new = step(other)["new_state"]
    early = [t for t in level0.times if t <= t0]
    late = [t for t in level0.times if t > t0 + 0.1]
    assert causality_fingerprint(new, early) == causality_fingerprint(stepped["new_state"], early)
    assert causality_fingerprint(other, early) == causality_fingerprint(level0, early)
    assert causality_fingerprint(new, late) != causality_fingerprint(stepped["new_state"], late)
