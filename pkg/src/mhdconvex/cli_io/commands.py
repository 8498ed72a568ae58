"""Subcommand implementations.  Each returns a Report and writes its artifacts."""

from __future__ import annotations

import dataclasses
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import container
from .config import ConfigError, build_params, persisted
from .report import Report, environment


# shared builders ----------------------------------------------------------------------

_PROFILES = {
    "sin_pi": lambda s: np.sin(np.pi * s),
    "ramp": lambda s: s,
    "sin_pi_squared": lambda s: np.sin(np.pi * s) ** 2,
}


def time_grid(cfg, params=None):
    T = cfg["params"]["T"] if params is None else params.T
    return np.linspace(0.0, T, cfg["time"]["samples"])


def modal_from_config(spec, times, T=1.0):
    from ..torus_spectral import ModalField

    xi = [m["xi"] for m in spec["modes"]]
    E = [np.array(m["re"], dtype=float) + 1j * np.array(m["im"], dtype=float) for m in spec["modes"]]
    prof = _PROFILES[spec.get("profile", "sin_pi")](np.asarray(times) / T) * spec.get("amplitude", 1.0)
    coef = np.repeat(prof[:, None], len(xi), axis=1)
    return ModalField(xi, E, times, coef)


def noise_model(cfg):
    from ..stochastic import NoiseModel

    n = cfg["noise"]
    return NoiseModel(k_max=n["k_max"], amplitude=tuple(n["amplitude"]), s0=n["s0"], seed=cfg["seed"])


def noise_state(cfg, params, times):
    from ..stochastic import sample_convolution

    return sample_convolution(noise_model(cfg), times=times, alpha=float(params.alpha), nu=params.nu)


def _tol(cfg, name, default):
    return float(cfg.get("tolerances", {}).get(name, default))


def _report(name, cfg, params=None):
    summary = params.summary() if params is not None else None
    if summary is not None:
        summary = json.loads(json.dumps(summary, default=str))
    return Report(name, environment(cfg["grid"], summary, cfg["seed"]))


def _pulse_time(params, frame=1, frac=0.4, base=0.5):
    """A time inside the pulse of ``frame`` (level-1 toy geometry)."""
    from ..geometry import build_geometric_basis

    count = len(build_geometric_basis().frames)
    w = params.T / (4 * count) / (params.tau * params.sigma)
    return base + frame * params.T / count / (params.tau * params.sigma) + frac * w, w


# geom ---------------------------------------------------------------------------------

def corrupted_basis(basis):
    """Fault injection: nudge one velocity dual matrix."""
    f = basis.lambda_u[0]
    dual = tuple(tuple(c + (Fraction(1, 100) if (i, j) == (0, 0) else 0) for j, c in enumerate(row))
                 for i, row in enumerate(f.dual))
    bad = dataclasses.replace(f, dual=dual)
    return dataclasses.replace(basis, lambda_u=(bad,) + tuple(basis.lambda_u[1:]))


def geometry_rows(rep: Report, cfg, fault=None):
    from ..geometry import (build_geometric_basis, gamma_skew, gamma_squared, gamma_sym,
                            reconstruct_skew, reconstruct_sym)

    basis = build_geometric_basis()
    if fault == "geometry":
        basis = corrupted_basis(basis)
    rng = np.random.default_rng(cfg["seed"])
    m = cfg["verify"]["geometry_samples"]
    tol = _tol(cfg, "geometry.reconstruction", 1e-12)
    D = rng.standard_normal((3, 3, m))
    D = 0.5 * (D + np.swapaxes(D, 0, 1))
    D *= basis.eps_u * rng.uniform(0, 1, m) / np.sqrt(np.einsum("ij...,ij...->...", D, D))
    S = np.eye(3)[:, :, None] + D
    g = gamma_sym(S, basis)
    err_u = float(np.max(np.abs(reconstruct_sym(g, basis) - S)))
    A = rng.standard_normal((3, 3, m))
    A = 0.5 * (A - np.swapaxes(A, 0, 1))
    A *= basis.eps_b * rng.uniform(0, 1, m) / np.sqrt(np.einsum("ij...,ij...->...", A, A))
    gb = gamma_skew(A, basis)
    err_b = float(np.max(np.abs(reconstruct_skew(gb, basis) - A)))
    rep.bound("geometry.reconstruction_u", err_u, tol, tag="PAPER")
    rep.bound("geometry.reconstruction_b", err_b, tol, tag="PAPER")
    gmin = min(float(np.min(v)) for v in gamma_squared(basis.lambda_u, S, np.eye(3)) + gamma_squared(basis.lambda_b, A))
    rep.flag("geometry.gamma_positive", gmin > 0, gmin, 0.0, tag="PAPER")
    rep.info("geometry.eps_u", basis.eps_u)
    rep.info("geometry.eps_b", basis.eps_b)
    rep.info("geometry.n_lambda", basis.n_lambda)
    return basis


def cmd_geom(cfg, out):
    rep = _report("geom", cfg)
    basis = geometry_rows(rep, cfg, cfg["verify"].get("fault"))
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "geometric_basis.json").write_text(basis.dumps() + "\n")
    rep.write(out)
    return rep


# blocks --------------------------------------------------------------------------------

def block_rows(rep: Report, cfg, params, scaling=True):
    from ..building_blocks import (ShearFlows, h_quadrature_error, profile_normalization,
                                   shear_normalization, support_overlap, temporal_blocks,
                                   temporal_normalization, verify_lp_scaling, verify_time_scaling)
    from ..geometry import build_geometric_basis

    basis = build_geometric_basis()
    tol = _tol(cfg, "blocks.normalization", 1e-8)
    rep.bound("blocks.profile_normalization", profile_normalization(), tol, 1.0, tag="PAPER")
    flows = ShearFlows(basis, params, cfg["grid"])
    sn = shear_normalization(flows)
    rep.bound("blocks.shear_mean_square", max(abs(x - 1) for x in sn), tol, tag="PAPER")
    tb = temporal_blocks(basis, params)
    if cfg["verify"].get("fault") == "blocks":
        tb.C *= 1.001
    tn = temporal_normalization(tb)
    rep.bound("blocks.temporal_normalization", max(abs(x - 1) for x in tn), tol, tag="PAPER")
    rep.flag("blocks.supports_disjoint", support_overlap(tb) == 0.0, support_overlap(tb), 0.0, tag="PAPER")
    ts = np.linspace(0, 0.999 * params.T / params.sigma, 13)
    rep.bound("blocks.h_quadrature", h_quadrature_error(tb, ts, frames=(0, 5, 11)), tol, tag="PAPER")
    tables = {}
    if scaling:
        lp = verify_lp_scaling()
        tm = verify_time_scaling()
        for r in lp[:3]:
            rep.bound(f"blocks.{r['quantity']}", r["measured"], r["tolerance"], r["reference"], tag="PAPER")
        for r in lp[3:]:
            rep.bound(f"blocks.{r['quantity']}", r["measured"], r["tolerance"], r["reference"], tag="DERIVED")
        for r in tm:
            rep.bound(f"blocks.{r['quantity']}", r["measured"], r["tolerance"], r["reference"], tag="PAPER")
        tables = {"lp": lp, "time": tm}
    return tables


def _write_table(path, rows):
    import csv

    keys = ["quantity", "measured", "reference", "tolerance", "pass"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in keys})


def cmd_blocks(cfg, out):
    params = build_params(cfg)
    rep = _report("blocks", cfg, params)
    tables = block_rows(rep, cfg, params)
    Path(out).mkdir(parents=True, exist_ok=True)
    _write_table(Path(out) / "blocks_lp_scaling.csv", tables["lp"])
    _write_table(Path(out) / "blocks_time_scaling.csv", tables["time"])
    rep.write(out)
    return rep


# noise ----------------------------------------------------------------------------------

def noise_rows(rep: Report, cfg, params):
    from ..stochastic import ou_marginal_check, smoothing_slope, verify_regularity

    model = noise_model(cfg)
    alpha, nu = float(params.alpha), params.nu
    ou = ou_marginal_check(model, n_paths=cfg["verify"]["ou_paths"], alpha=alpha, nu=nu)
    rep.bound("stochastic.ou_marginals_worst_z", ou["worst_z"], 3.0, tag="TRIVIAL")
    reg = verify_regularity(model, n_paths=max(1000, cfg["verify"]["ou_paths"] // 4), alpha=alpha, nu=nu)
    for ch, v in reg["channels"].items():
        if v.get("zero"):
            continue
        rep.flag(f"stochastic.increment_slope_ch{ch}", all(v["slope_pass"].values()), v["slope"], 2 * 0.49,
                 0.1, tag="PAPER")
        rep.flag(f"stochastic.moment_envelope_ch{ch}", v["moment_pass"], max(v["moment_ratio"].values()),
                 None, None, tag="PAPER")
    sm = []
    for a, b in ((1.0, 1.0), (1.25, 1.0), (1.0, 2.0)):
        r = smoothing_slope(a, b)
        sm.append({"alpha": a, "beta": b, **r})
        rep.bound(f"stochastic.smoothing_slope_a{a}_b{b}", r["rel_error"], 0.1, tag="PAPER")
    return {"ou": ou, "regularity": reg, "smoothing": sm}


def cmd_noise(cfg, out):
    params = build_params(cfg)
    rep = _report("noise", cfg, params)
    tables = noise_rows(rep, cfg, params)
    times = time_grid(cfg, params)
    st = noise_state(cfg, params, times)
    rep.info("stochastic.fingerprint_prefix", int(st.fingerprint()[:12], 16), tag="TRIVIAL")
    Path(out).mkdir(parents=True, exist_ok=True)
    arrays = {"times": times}
    for ch in (1, 2):
        arrays[f"z{ch}_coef"] = st.z[ch].coef
        arrays[f"z{ch}_xi"] = st.z[ch].xi.astype(float)
    container.write(Path(out) / "noise.mhdf", arrays,
                    {"kind": "noise", "model": st.model.to_json(), "fingerprint": st.fingerprint(),
                     "alpha": float(params.alpha), "nu": params.nu})
    (Path(out) / "noise_moments.json").write_text(json.dumps(_jsonable(tables), indent=2, sort_keys=True) + "\n")
    rep.write(out)
    return rep


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# init / step -----------------------------------------------------------------------------

def build_level0(cfg):
    from ..convex_step import init_state

    params = build_params(cfg, level=0)
    times = time_grid(cfg, params)
    v = modal_from_config(cfg["initial"]["v"], times, params.T)
    h = modal_from_config(cfg["initial"]["h"], times, params.T)
    noise = noise_state(cfg, params, times)
    return init_state(v, h, noise, params, cfg["grid"])


_SYM = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_SKEW = ((0, 1), (0, 2), (1, 2))


def pack_sym(R):
    return np.stack([R[i, j] for i, j in _SYM])


def unpack_sym(P):
    R = np.empty((3, 3) + P.shape[1:], dtype=P.dtype)
    for c, (i, j) in enumerate(_SYM):
        R[i, j] = R[j, i] = P[c]
    return R


def pack_skew(R):
    return np.stack([R[i, j] for i, j in _SKEW])


def unpack_skew(P):
    R = np.zeros((3, 3) + P.shape[1:], dtype=P.dtype)
    for c, (i, j) in enumerate(_SKEW):
        R[i, j], R[j, i] = P[c], -P[c]
    return R


def _samples(state, times, stresses=True):
    """Physical samples; stresses packed to their independent components."""
    from ..torus_spectral import torus

    T = torus(state.n)
    out = {"u": [], "b": [], "Ru": [], "Rb": []}
    for t in times:
        U, B = state.fields(t)
        out["u"].append(T.ifft(U))
        out["b"].append(T.ifft(B))
        if stresses:
            Ru, Rb = state.stress(t)
            out["Ru"].append(pack_sym(T.ifft(Ru)))
            out["Rb"].append(pack_skew(T.ifft(Rb)))
    return {k: np.stack(v) for k, v in out.items() if v}


def write_state(path, state, cfg):
    """Level 0 is rebuilt exactly from its recipe, so only (u, B) samples are stored."""
    times = np.asarray(state.times, dtype=float)
    arrays = {"times": times, **_samples(state, times, stresses=state.q > 0)}
    meta = {"kind": "state", "level": state.q, "grid": state.n, "config": persisted(cfg),
            "noise_fingerprint": state.noise.fingerprint(),
            "recipe": "level0" if state.q == 0 else "samples"}
    return container.write(path, arrays, meta)


def read_state(path, expect_level=None):
    from ..convex_step import state_from_samples
    from ..torus_spectral import torus

    arrays, meta = container.read(path, expect_level)
    if meta.get("kind") != "state":
        raise container.ContainerError("wrong_kind", f"{path} holds {meta.get('kind')!r}, not a state", path)
    cfg = meta["config"]
    if meta["recipe"] == "level0":
        state = build_level0(cfg)
    else:
        missing = {"u", "b", "Ru", "Rb"} - set(arrays)
        if missing:
            raise container.ContainerError("missing_arrays", f"state lacks {sorted(missing)}", path)
        params = build_params(cfg, level=meta["level"])
        times = arrays["times"]
        noise = noise_state(cfg, params, time_grid(cfg, params))
        T = torus(meta["grid"])
        samples = {"u": [T.fft(x) for x in arrays["u"]], "b": [T.fft(x) for x in arrays["b"]],
                   "Ru": [T.fft(unpack_sym(x)) for x in arrays["Ru"]],
                   "Rb": [T.fft(unpack_skew(x)) for x in arrays["Rb"]]}
        state = state_from_samples(meta["level"], params, meta["grid"], times, samples, noise)
    if state.noise.fingerprint() != meta["noise_fingerprint"]:
        raise container.ContainerError("noise_mismatch", "regenerated noise differs from the stored fingerprint", path)
    return state, cfg, meta


def cmd_init(cfg, out):
    from ..convex_step import residual_at

    state = build_level0(cfg)
    rep = _report("init", cfg, state.params)
    tol = _tol(cfg, "init.residual", 1e-10)
    worst = 0.0
    for t in (0.3, 0.7):
        r = residual_at(state, t)
        worst = max(worst, r["res_u"], r["res_b"])
    rep.bound("convex_step.level0_residual", worst, tol, tag="TRIVIAL")
    Path(out).mkdir(parents=True, exist_ok=True)
    digest = write_state(Path(out) / "state_q0.mhdf", state, cfg)
    rep.info("init.state_sha256_prefix", int(digest[:12], 16), tag="TRIVIAL")
    rep.write(out)
    return rep


def step_rows(rep: Report, cfg, state, new, evaluator, params):
    from ..convex_step import (corrector_identity, perturbation_invariants, residual_check,
                               symmetry_violations)
    from ..torus_spectral import torus

    T = torus(state.n)
    t_u, w = _pulse_time(params, 1, 0.4)
    t_b, _ = _pulse_time(params, 8, 0.55)
    inv = perturbation_invariants(evaluator, t_u)
    rep.bound("convex_step.div_perturbation", max(inv[k] for k in inv if k.startswith("div")),
              _tol(cfg, "step.divergence", 1e-10), tag="PAPER")
    rep.bound("convex_step.mean_perturbation", max(inv["mean_w"], inv["mean_d"]),
              _tol(cfg, "step.mean", 1e-10), tag="PAPER")
    ci = corrector_identity(evaluator, t_b)
    rep.bound("convex_step.curlcurl_identity", max(v for v in ci.values() if isinstance(v, float)),
              _tol(cfg, "step.curlcurl", 1e-10), tag="PAPER")
    Ru, Rb = new.stress(t_u)
    sv = symmetry_violations(T, Ru, Rb)
    scale = max(1.0, float(np.max(np.abs(T.ifft(Ru)))))
    rep.bound("convex_step.stress_symmetry", max(sv.values()) / scale, _tol(cfg, "step.symmetry", 1e-12), tag="TRIVIAL")
    if new.q == 1 and t_u + 2 * w / 64 < params.T:
        rc = residual_check(new, [t_u], steps=[w / 64, w / 128])
        res = max(rc["res_u"], rc["res_b"])
        rep.bound("convex_step.residual", res, _tol(cfg, "step.residual", 1e-6), tag="DERIVED")
        rep.info("convex_step.residual_fd_order", rc["orders"][0], 4.0)


def cmd_step(cfg, out, state_in, expect_level=None):
    from ..convex_step import diagnostics, step

    state, scfg, meta = read_state(state_in, expect_level)
    params = state.params
    rep = _report("step", scfg, params)
    res = step(state, sample_times=state.times)
    new, ev = res["new_state"], res["step"]
    step_rows(rep, scfg, state, new, ev, params)
    diag = diagnostics(new, np.linspace(0.25, 0.75, 5), previous=state)
    rep.info("convex_step.J", diag["J"])
    rep.info("convex_step.J_tilde", diag["J_tilde"])
    rep.info("convex_step.decay_ratio", diag["decay_ratio"])
    rep.info("convex_step.harmonics", ev.flows.J)
    Path(out).mkdir(parents=True, exist_ok=True)
    digest = write_state(Path(out) / f"state_q{new.q}.mhdf", new, scfg)
    (Path(out) / f"diagnostics_q{new.q}.json").write_text(json.dumps(_jsonable(diag), indent=2, sort_keys=True) + "\n")
    rep.info("step.state_sha256_prefix", int(digest[:12], 16), tag="TRIVIAL")
    rep.write(out)
    return rep


# galerkin ----------------------------------------------------------------------------------

def galerkin_rows(rep: Report, cfg, params):
    from ..galerkin import (GalerkinBasis, GalerkinConfig, cancellation_checks, decay_closed_form,
                            dissipation_quadrature, energy_check, solve_linearized, uniqueness_check)

    g = cfg["galerkin"]
    times = time_grid(cfg, params)
    u = modal_from_config(cfg["initial"]["v"], times, params.T)
    B = modal_from_config(cfg["initial"]["h"], times, params.T)
    gc = GalerkinConfig(n_modes=g["n_modes"], dt=g["dt"], T=g["T"], alpha=g["alpha"], nu=g["nu"], u=u, B=B,
                        mollification=g["mollification"])
    from ..stochastic import sample_convolution

    noise = sample_convolution(noise_model(cfg), times=times, alpha=g["alpha"], nu=g["nu"])
    basis = GalerkinBasis(g["n_modes"])
    rng = np.random.default_rng(cfg["seed"])
    decay = 1.0 / (1.0 + basis.k2)
    v0, h0 = rng.standard_normal(basis.n_modes) * decay, rng.standard_normal(basis.n_modes) * decay
    st = solve_linearized(gc, noise, v0, h0, basis)
    ec = energy_check(st, _tol(cfg, "galerkin.energy", 1e-8))
    rep.bound("galerkin.energy_inequality", ec["worst_violation"], _tol(cfg, "galerkin.energy", 1e-8), tag="PAPER")
    rep.info("galerkin.energy_balance_defect", ec["balance_defect"])
    cc = cancellation_checks(st)
    tol_c = _tol(cfg, "galerkin.cancellation", 1e-10)
    rep.bound("galerkin.transport_cancellation", max(cc["transport_u"], cc["transport_b"]), tol_c, tag="PAPER")
    rep.bound("galerkin.cross_cancellation", cc["cross"], tol_c, tag="PAPER")
    uq = uniqueness_check(gc, noise, v0, h0, etas=(1e-6,))
    rep.bound("galerkin.repeat_solve", uq["repeat"], 1e-10, tag="PAPER")
    rep.bound("galerkin.zero_data", uq["zero_data"], 1e-10, tag="TRIVIAL")
    rep.info("galerkin.reordered_basis", uq["reordered"])
    free = GalerkinConfig(n_modes=g["n_modes"], dt=g["dt"], T=g["T"], alpha=g["alpha"], nu=g["nu"])
    sd = solve_linearized(free, None, v0, h0, basis)
    rep.bound("galerkin.pure_decay", decay_closed_form(sd), 1e-12, tag="TRIVIAL")
    rep.info("galerkin.dissipation_quadrature", dissipation_quadrature(st)["difference"])
    return st, ec


def cmd_galerkin(cfg, out):
    params = build_params(cfg)
    rep = _report("galerkin", cfg, params)
    st, ec = galerkin_rows(rep, cfg, params)
    Path(out).mkdir(parents=True, exist_ok=True)
    L = st.ledger
    container.write(Path(out) / "galerkin.mhdf",
                    {"times": st.times, "v": st.v, "h": st.h, "dissipation": L["dissipation"], "work": L["work"]},
                    {"kind": "galerkin", "n_modes": st.basis.n_modes, "modes": [list(map(int, m[0])) + [m[1], m[2]]
                                                                             for m in st.basis.modes]})
    ledger = {"lhs": ec["lhs"].tolist(), "rhs": ec["rhs"].tolist(), "worst_violation": ec["worst_violation"],
              "balance_defect": ec["balance_defect"], "cfl": L["cfl"], "widths": list(L["widths"])}
    (Path(out) / "galerkin_ledger.json").write_text(json.dumps(_jsonable(ledger), indent=2, sort_keys=True) + "\n")
    rep.write(out)
    return rep


# verify ------------------------------------------------------------------------------------

def torus_rows(rep: Report, cfg):
    from ..torus_spectral import torus

    n = min(cfg["grid"], 32)
    T = torus(n)
    rng = np.random.default_rng(cfg["seed"])
    low = (T.kabs <= n // 4) & T.mask
    V = T.fft(rng.standard_normal((3, n, n, n))) * low
    V[:, 0, 0, 0] = 0
    R = T.inv_div_u_s(V)
    r = T.ifft(R)
    err = float(np.max(np.abs(T.ifft(T.tensor_div_s(R) - V)))) / float(np.max(np.abs(T.ifft(V))))
    rep.bound("torus.inv_div_u", err, _tol(cfg, "torus.inv_div", 1e-10), tag="PAPER")
    sym = max(float(np.max(np.abs(r - np.swapaxes(r, 0, 1)))), float(np.max(np.abs(np.einsum("ii...->...", r)))))
    rep.bound("torus.inv_div_u_symmetric_tracefree", sym / max(1.0, float(np.max(np.abs(r)))), 1e-12, tag="PAPER")
    W = T.leray_s(V)
    Rb = T.inv_div_b_s(W)
    rb = T.ifft(Rb)
    err_b = float(np.max(np.abs(T.ifft(T.tensor_div_s(Rb) - W)))) / float(np.max(np.abs(T.ifft(W))))
    rep.bound("torus.inv_div_b", err_b, _tol(cfg, "torus.inv_div", 1e-10), tag="PAPER")
    skew = float(np.max(np.abs(rb + np.swapaxes(rb, 0, 1)))) / max(1.0, float(np.max(np.abs(rb))))
    rep.bound("torus.inv_div_b_skew", skew, 1e-12, tag="PAPER")
    div = float(np.max(np.abs(T.ifft(T.div_s(W))))) / float(np.max(np.abs(T.ifft(W))))
    rep.bound("torus.leray_divergence_free", div, 1e-12, tag="TRIVIAL")


def amplitude_rows(rep: Report, cfg, params):
    from ..amplitudes import build_amplitudes, identity_magnetic, identity_residual, identity_velocity
    from ..building_blocks import ShearFlows, temporal_blocks
    from ..geometry import build_geometric_basis
    from ..torus_spectral import torus

    n = cfg["grid"]
    T = torus(n)
    basis = build_geometric_basis()
    flows = ShearFlows(basis, params, n)
    blocks = temporal_blocks(basis, params)
    Ru, Rb = random_stresses(T, np.random.default_rng(cfg["seed"] + 1))
    amps = build_amplitudes(Ru, Rb, params.delta_next, basis)
    worst = 0.0
    for t in (_pulse_time(params, 1, 0.4)[0], _pulse_time(params, 8, 0.55)[0], 0.37):
        for fn, R, rho in ((identity_velocity, Ru, amps.rho_u), (identity_magnetic, Rb, amps.rho_b)):
            scale = float(np.max(np.abs(rho)))
            worst = max(worst, identity_residual(*fn(T, amps, flows, blocks, R, t), scale=scale)["relative"])
    rep.bound("amplitudes.cancellation_identities", worst, _tol(cfg, "amplitudes.identity", 1e-9), tag="PAPER")


def random_stresses(T, rng, bandwidth=2, scale=1.0):
    """Smooth symmetric trace-free R^u and skew R^B fields (band-limited)."""
    low = (T.kabs <= bandwidth) & T.mask
    X = T.ifft(T.fft(rng.standard_normal((3, 3) + T.shape)) * low)
    Y = T.ifft(T.fft(rng.standard_normal((3, 3) + T.shape)) * low)
    Ru = 0.5 * (X + np.swapaxes(X, 0, 1))
    Ru -= np.eye(3)[:, :, None, None, None] * np.einsum("ii...->...", Ru) / 3
    Rb = 0.5 * (Y - np.swapaxes(Y, 0, 1))
    s = scale / max(float(np.max(np.abs(Ru))), float(np.max(np.abs(Rb))))
    return Ru * s, Rb * s


def cmd_verify(cfg, out):
    from ..convex_step import step

    params = build_params(cfg)
    rep = _report("verify", cfg, params)
    torus_rows(rep, cfg)
    geometry_rows(rep, cfg, cfg["verify"].get("fault"))
    block_rows(rep, cfg, params)
    amplitude_rows(rep, cfg, params)
    state = build_level0(cfg)
    from ..convex_step import residual_at
    worst = max(max(r["res_u"], r["res_b"]) for r in (residual_at(state, t) for t in (0.3, 0.7)))
    rep.bound("convex_step.level0_residual", worst, _tol(cfg, "init.residual", 1e-10), tag="TRIVIAL")
    res = step(state, sample_times=state.times)
    step_rows(rep, cfg, state, res["new_state"], res["step"], state.params)
    noise_rows(rep, cfg, params)
    rep.write(out)
    return rep


COMMANDS = {"verify": cmd_verify, "init": cmd_init, "noise": cmd_noise, "galerkin": cmd_galerkin,
            "blocks": cmd_blocks, "geom": cmd_geom}

__all__ = ["COMMANDS", "cmd_step", "ConfigError"]
