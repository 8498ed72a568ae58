"""Trace-class noise, exact Ornstein-Uhlenbeck stochastic convolutions and
the fractional heat semigroup on T^3.

Every real basis function is sqrt(2) (2 pi)^{-3/2} p cos(xi . x) or the sine
analogue, with p one of two unit polarisations orthogonal to xi, so the
basis is orthonormal in L^2 and divergence free.  Per mode the stochastic
convolution is an OU process with rate mu = nu |xi|^{2 alpha} + 1, which is
sampled exactly on any time grid.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .torus_spectral import ModalField, torus

log = logging.getLogger(__name__)

_NORM = math.sqrt(2.0) * (2 * np.pi) ** -1.5
_OFF = 1 << 16


def _half_space(xi):
    for c in xi:
        if c != 0:
            return c > 0
    return False


def enumerate_wavevectors(k_max: float):
    """Half-space integer vectors 0 < |xi| <= k_max, sorted by |xi| then lexicographically."""
    r = int(math.floor(k_max))
    out = []
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            for c in range(-r, r + 1):
                v = (a, b, c)
                if 0 < a * a + b * b + c * c <= k_max**2 + 1e-12 and _half_space(v):
                    out.append(v)
    out.sort(key=lambda v: (v[0] ** 2 + v[1] ** 2 + v[2] ** 2, v))
    return out


def polarisations(xi):
    """Two orthonormal vectors orthogonal to xi, chosen deterministically."""
    x = np.asarray(xi, dtype=float)
    x = x / np.linalg.norm(x)
    ref = np.array([0.0, 0.0, 1.0]) if abs(x[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    p1 = np.cross(x, ref)
    p1 /= np.linalg.norm(p1)
    p2 = np.cross(x, p1)
    return p1, p2


@dataclass
class NoiseModel:
    """W^(i) = sum_k c_k^(i) e_k beta_k^(i) on a finite mode set.

    ``spectrum`` gives c_k = amplitude[i] |xi|^{-s0}.  Modes are all
    (xi, polarisation, cos/sin) with |xi| <= k_max.
    """

    k_max: float = 1.0
    amplitude: tuple = (0.05, 0.05)
    s0: float = 6.0
    seed: int = 0
    modes: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be non-negative")
        self.amplitude = tuple(float(a) for a in self.amplitude)
        if len(self.amplitude) != 2:
            raise ValueError("two channel amplitudes are required")
        self.modes = []
        for xi in enumerate_wavevectors(self.k_max):
            for pol in (0, 1):
                for cs in (0, 1):
                    self.modes.append((xi, pol, cs))

    def coefficients(self, channel: int):
        amp = self.amplitude[channel - 1]
        return np.array([amp * float(np.dot(xi, xi)) ** (-self.s0 / 2) for xi, _, _ in self.modes])

    def trace(self, channel: int) -> float:
        """Tr(G_i G_i^*) = sum_k (c_k^(i))^2."""
        return float(np.sum(self.coefficients(channel) ** 2))

    def to_json(self):
        return {"k_max": self.k_max, "amplitude": list(self.amplitude), "s0": self.s0,
                "seed": int(self.seed), "n_modes": len(self.modes),
                "trace": [self.trace(1), self.trace(2)]}

    @classmethod
    def from_json(cls, d):
        return cls(k_max=d.get("k_max", 1.0), amplitude=tuple(d.get("amplitude", (0.05, 0.05))),
                   s0=d.get("s0", 6.0), seed=int(d.get("seed", 0)))

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def basis_polarisation(xi, pol, cs):
    p = polarisations(xi)[pol]
    return _NORM * p * (1.0 if cs == 0 else -1j)


def _mode_arrays(modes):
    xi = np.array([m[0] for m in modes], dtype=np.int64).reshape(-1, 3)
    E = np.array([basis_polarisation(*m) for m in modes], dtype=complex).reshape(-1, 3)
    return xi, E


def _rates(modes, alpha, nu):
    return np.array([nu * float(np.dot(xi, xi)) ** float(alpha) + 1.0 for xi, _, _ in modes])


def mode_stream(seed: int, channel: int, mode):
    """Counter-based generator owned by one (channel, mode)."""
    xi, pol, cs = mode
    key = (channel, xi[0] + _OFF, xi[1] + _OFF, xi[2] + _OFF, pol, cs)
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def ou_step_factors(mu, c, dt):
    """Decay e^{-mu dt} and exact innovation std for one step."""
    decay = np.exp(-mu * dt)
    std = c * np.sqrt(-np.expm1(-2 * mu * dt) / (2 * mu))
    return decay, std


def ou_variance(c, mu, t):
    return c**2 * -np.expm1(-2 * mu * t) / (2 * mu)


# semigroup ---------------------------------------------------------------------

def heat_semigroup(f, t, alpha, nu):
    """e^{t(-nu(-Delta)^alpha - I)} f for a physical field (..., n, n, n)."""
    if t < 0:
        raise ValueError("semigroup time must be non-negative")
    T = torus(np.shape(f)[-1])
    mult = np.exp(-t * (nu * T.k2 ** float(alpha) + 1.0))
    return T.ifft(T.fft(f) * mult)


def project_onto_basis(f, modes):
    """<f, e_k> for a physical divergence-free field f."""
    n = np.shape(f)[-1]
    T = torus(n)
    F = T.fft(f)
    out = np.zeros(len(modes))
    for j, (xi, pol, cs) in enumerate(modes):
        Fx = _coef_at(F, xi, n)
        # f = sum F e^{i xi (x+pi)}; <f, Re(E e^{i xi x})> over T^3
        E = basis_polarisation(xi, pol, cs) * (-1.0) ** sum(xi)
        out[j] = (2 * np.pi) ** 3 * np.real(np.dot(Fx, np.conj(E)))
    return out


def _coef_at(F, xi, n):
    a, b, c = xi
    if c >= 0:
        return F[:, a % n, b % n, c]
    return np.conj(F[:, -a % n, -b % n, -c])


def _initial_modes(f, tol=1e-12):
    """Half-space wave vectors carrying energy in a physical field."""
    n = np.shape(f)[-1]
    T = torus(n)
    F = T.fft(f)
    if np.max(np.abs(F[:, 0, 0, 0])) > tol * max(1.0, float(np.max(np.abs(F)))):
        raise ValueError("initial data must be mean-free")
    div = T.div_s(F)
    scale = max(1.0, float(np.max(np.abs(T.kabs * F))))
    if np.max(np.abs(div)) > 1e-10 * scale:
        raise ValueError("initial data must be divergence-free")
    mag = np.sqrt(np.sum(np.abs(F) ** 2, axis=0)) * T.mask
    idx = np.argwhere(mag > tol * max(float(mag.max()), 1e-300))
    k, kr = np.fft.fftfreq(n, 1.0 / n), np.arange(n // 2 + 1)
    out = set()
    for i, j, l in idx:
        v = (int(k[i]), int(k[j]), int(kr[l]))
        if not _half_space(v):
            v = tuple(-x for x in v)
        out.add(v)
    return sorted(out, key=lambda v: (v[0] ** 2 + v[1] ** 2 + v[2] ** 2, v))


@dataclass
class NoiseState:
    model: NoiseModel
    times: np.ndarray
    alpha: float
    nu: float
    modes: list
    innovations: dict       # channel -> (Nt-1, K) standard normals
    z: dict                 # channel -> ModalField, full convolution z_i
    z_det: dict             # channel -> ModalField, semigroup part of the data
    Z: dict                 # channel -> ModalField, zero-data convolution

    @property
    def z1(self):
        return self.z[1]

    @property
    def z2(self):
        return self.z[2]

    def fingerprint(self):
        import hashlib
        h = hashlib.sha256()
        for ch in (1, 2):
            h.update(np.ascontiguousarray(self.z[ch].coef).tobytes())
        return h.hexdigest()


def sample_convolution(model: NoiseModel, u0=None, b0=None, times=None, alpha=1.0, nu=1.0,
                       seed=None, innovations=None) -> NoiseState:
    """Exact OU sampling of z_i = e^{tA} x_0 + int_0^t e^{(t-s)A} dW^(i).

    ``u0``/``b0`` are physical divergence-free fields (or None).  Optional
    ``innovations`` replace the generated standard normals (used for the
    causality test).
    """
    times = np.asarray(times if times is not None else np.linspace(0, 1, 65), dtype=float)
    if times[0] != 0.0:
        raise ValueError("time grid must start at 0")
    seed = model.seed if seed is None else seed
    modes = list(model.modes)
    known = {(m[0]) for m in modes}
    for f0 in (u0, b0):
        if f0 is None:
            continue
        for xi in _initial_modes(np.asarray(f0, dtype=float)):
            if xi not in known:
                known.add(xi)
                modes.extend((xi, pol, cs) for pol in (0, 1) for cs in (0, 1))
    n_noise = len(model.modes)
    mu = _rates(modes, alpha, nu)
    xi, E = _mode_arrays(modes)
    dts = np.diff(times)
    innov, z, zdet, Zf = {}, {}, {}, {}
    for ch, f0 in ((1, u0), (2, b0)):
        c = np.zeros(len(modes))
        c[:n_noise] = model.coefficients(ch)
        if innovations is not None:
            N = np.asarray(innovations[ch], dtype=float)
        else:
            N = np.zeros((len(dts), len(modes)))
            for k in range(n_noise):
                N[:, k] = mode_stream(seed, ch, modes[k]).standard_normal(len(dts))
        innov[ch] = N
        x0 = project_onto_basis(np.asarray(f0, dtype=float), modes) if f0 is not None else np.zeros(len(modes))
        det = np.exp(-np.outer(times, mu)) * x0
        Zc = np.zeros((len(times), len(modes)))
        for i, dt in enumerate(dts):
            decay, std = ou_step_factors(mu, c, dt)
            Zc[i + 1] = decay * Zc[i] + std * N[i]
        zdet[ch] = ModalField(xi, E, times, det)
        Zf[ch] = ModalField(xi, E, times, Zc)
        z[ch] = ModalField(xi, E, times, det + Zc)
    return NoiseState(model, times, alpha, nu, modes, innov, z, zdet, Zf)


def altered_after(state: NoiseState, t0: float, seed: int) -> NoiseState:
    """Same noise on [0, t0], fresh innovations on (t0, T]."""
    rng = np.random.default_rng(seed)
    new = {}
    for ch in (1, 2):
        N = state.innovations[ch].copy()
        late = state.times[1:] > t0 + 1e-14
        N[late] = rng.standard_normal(N[late].shape) * (np.abs(N[late]) > 0)
        new[ch] = N
    ch1 = state.z_det[1].coef[0]
    ch2 = state.z_det[2].coef[0]
    return _resample(state, new, ch1, ch2)


def _resample(state: NoiseState, innovations, x01, x02):
    mu = _rates(state.modes, state.alpha, state.nu)
    n_noise = len(state.model.modes)
    dts = np.diff(state.times)
    z, Zf = {}, {}
    for ch, x0 in ((1, x01), (2, x02)):
        c = np.zeros(len(state.modes))
        c[:n_noise] = state.model.coefficients(ch)
        Zc = np.zeros((len(state.times), len(state.modes)))
        for i, dt in enumerate(dts):
            decay, std = ou_step_factors(mu, c, dt)
            Zc[i + 1] = decay * Zc[i] + std * innovations[ch][i]
        base = state.z_det[ch]
        Zf[ch] = ModalField(base.xi, base.E, state.times, Zc)
        z[ch] = ModalField(base.xi, base.E, state.times, base.coef + Zc)
    return NoiseState(state.model, state.times, state.alpha, state.nu, state.modes,
                      innovations, z, dict(state.z_det), Zf)


def zero_noise(times, alpha=1.0, nu=1.0) -> NoiseState:
    model = NoiseModel(k_max=0.0)
    return sample_convolution(model, times=times, alpha=alpha, nu=nu)


# truncation ---------------------------------------------------------------------

def truncation_radius(lambda_q: float, n: int) -> float:
    nyq = n // 2 - 1
    try:
        r = lambda_q**15
    except OverflowError:
        r = math.inf
    if r >= nyq:
        log.warning("truncation radius lambda_q^15 = %.3g exceeds grid Nyquist %d; truncation is a no-op", r, nyq)
        return float(nyq) * math.sqrt(3) + 1
    return float(r)


def truncate_modal(f: ModalField, radius: float) -> ModalField:
    keep = np.sqrt(np.sum(f.xi.astype(float) ** 2, axis=1)) <= radius
    coef = f.coef * keep[None, :]
    return ModalField(f.xi, f.E, f.times, coef)


def truncate_noise(state: NoiseState, lambda_q: float, n: int):
    """Z_{i,q} = P_{<= lambda_q^15} Z_i and z_{i,q} = z_i^data + Z_{i,q}."""
    r = truncation_radius(lambda_q, n)
    Zq, zq = {}, {}
    for ch in (1, 2):
        Zq[ch] = truncate_modal(state.Z[ch], r)
        zq[ch] = ModalField(Zq[ch].xi, Zq[ch].E, state.times, state.z_det[ch].coef + Zq[ch].coef)
    return Zq, zq


def truncate_field(f, radius):
    """Sharp Fourier cutoff |xi| <= radius of a physical field."""
    T = torus(np.shape(f)[-1])
    return T.ifft(T.fft(f) * (T.kabs <= radius))


# Monte-Carlo verification -----------------------------------------------------------

def _mc_paths(model, channel, times, n_paths, alpha, nu, seed, mode_ids=None):
    """Zero-data OU paths, shape (Nt, n_paths, K)."""
    modes = model.modes if mode_ids is None else [model.modes[i] for i in mode_ids]
    c = model.coefficients(channel)
    if mode_ids is not None:
        c = c[list(mode_ids)]
    mu = _rates(modes, alpha, nu)
    dts = np.diff(times)
    X = np.zeros((len(times), n_paths, len(modes)))
    normals = np.stack([mode_stream(seed, channel, m).standard_normal((len(dts), n_paths)) for m in modes], axis=-1)
    for i, dt in enumerate(dts):
        decay, std = ou_step_factors(mu, c, dt)
        X[i + 1] = decay * X[i] + std * normals[i]
    return X, c, mu


def ou_marginal_check(model: NoiseModel, t=0.5, n_paths=10_000, n_steps=16, alpha=1.0, nu=1.0, seed=None):
    """Empirical mean/variance of every mode against the closed form."""
    seed = model.seed if seed is None else seed
    times = np.linspace(0, t, n_steps + 1)
    rows = []
    for ch in (1, 2):
        X, c, mu = _mc_paths(model, ch, times, n_paths, alpha, nu, seed)
        xt = X[-1]
        var = ou_variance(c, mu, t)
        m_emp = xt.mean(axis=0)
        v_emp = (xt**2).mean(axis=0)
        se_m = np.sqrt(var / n_paths)
        se_v = (xt**2).std(axis=0, ddof=1) / math.sqrt(n_paths)
        for k in range(len(c)):
            rows.append({"channel": ch, "mode": k, "mean": float(m_emp[k]), "var": float(v_emp[k]),
                         "var_exact": float(var[k]),
                         "mean_z": float(abs(m_emp[k]) / se_m[k]) if se_m[k] > 0 else 0.0,
                         "var_z": float(abs(v_emp[k] - var[k]) / se_v[k]) if se_v[k] > 0 else 0.0})
    worst = max((max(r["mean_z"], r["var_z"]) for r in rows), default=0.0)
    return {"rows": rows, "worst_z": worst, "pass": worst <= 3.0}


def increment_closed_form(c, mu, t, s):
    """E|X(t+s) - X(t)|^2 for zero-data OU."""
    vt, vts = ou_variance(c, mu, t), ou_variance(c, mu, t + s)
    return vts + vt - 2 * np.exp(-mu * s) * vt


def verify_regularity(model: NoiseModel, n_paths=2000, p_list=(2, 4, 8), gammas=(0.25, 0.4, 0.49),
                      T=1.0, n_steps=256, alpha=1.0, nu=1.0, sobolev=4.0, seed=None):
    """Monte-Carlo increment slope and Gaussian moment growth of Z_i.

    Increments are measured in L^2 (the basis is orthonormal), moments in
    H^{sobolev}; L is reported as max_p (E||Z||^p)^{1/p} / sqrt(p-1).
    """
    seed = model.seed if seed is None else seed
    if n_paths < 1000:
        log.warning("n_paths=%d < 1000: confidence intervals will be wide", n_paths)
    times = np.linspace(0, T, n_steps + 1)
    out = {"channels": {}}
    for ch in (1, 2):
        X, c, mu = _mc_paths(model, ch, times, n_paths, alpha, nu, seed)
        if not np.any(c):
            out["channels"][ch] = {"zero": True, "moments": {p: 0.0 for p in p_list}, "pass": True}
            continue
        t_ref = n_steps // 2
        lags = np.array([1, 2, 4, 8, 16])
        emp, exact, se = [], [], []
        for lag in lags:
            d = np.sum((X[t_ref + lag] - X[t_ref]) ** 2, axis=-1)
            emp.append(d.mean())
            se.append(d.std(ddof=1) / math.sqrt(n_paths))
            exact.append(np.sum(increment_closed_form(c, mu, times[t_ref], times[lag])))
        emp, exact, se = map(np.array, (emp, exact, se))
        s = times[lags]
        slope = float(np.polyfit(np.log(s), np.log(emp), 1)[0])
        weights = np.array([float(np.dot(m[0], m[0])) for m in model.modes])
        hw = (1 + weights) ** sobolev
        normsq = np.sum(hw * X[-1] ** 2, axis=-1)
        moments, ratios = {}, {}
        for p in p_list:
            mp = float(np.mean(normsq ** (p / 2)))
            moments[p] = mp
            ratios[p] = mp / float(np.mean(normsq)) ** (p / 2)
        envelope = {p: (p - 1) ** (p / 2) * 1.2 if p > 2 else 1.2 for p in p_list}
        L_fit = max(moments[p] ** (1 / p) / math.sqrt(max(p - 1, 1)) for p in p_list)
        out["channels"][ch] = {
            "increment_lags": s.tolist(), "increment_mc": emp.tolist(), "increment_exact": exact.tolist(),
            "increment_z": (np.abs(emp - exact) / se).tolist(), "slope": slope,
            "slope_pass": {g: slope >= 2 * g - 0.1 for g in gammas},
            "moments": moments, "moment_ratio": ratios, "envelope": envelope,
            "moment_pass": all(ratios[p] <= envelope[p] for p in p_list),
            "L_fit": L_fit, "trace": model.trace(ch),
        }
        out["channels"][ch]["pass"] = (all(out["channels"][ch]["slope_pass"].values())
                                       and out["channels"][ch]["moment_pass"])
    out["pass"] = all(v["pass"] for v in out["channels"].values())
    return out


def smoothing_norm(t, alpha, beta, n):
    """||(-Delta)^{beta/2} e^{-t(-Delta)^alpha}||_{L^2 -> L^2} on the n-grid."""
    T = torus(n)
    k2 = np.unique(T.k2[(T.k2 > 0) & T.mask])
    return float(np.max(k2 ** (beta / 2) * np.exp(-t * k2 ** float(alpha))))


def smoothing_slope(alpha, beta, n=64, n_t=12):
    """Slope of log smoothing_norm against log t.

    The t range keeps the continuum maximiser |xi|* = (beta/(2 alpha t))^{1/(2 alpha)}
    inside [2, n/4], where the lattice resolves it.
    """
    alpha = float(alpha)
    t_hi = beta / (2 * alpha) / 2.0 ** (2 * alpha)
    t_lo = beta / (2 * alpha) / (n / 4) ** (2 * alpha)
    ts = np.geomspace(t_lo, t_hi, n_t)
    vals = np.array([smoothing_norm(t, alpha, beta, n) for t in ts])
    slope = float(np.polyfit(np.log(ts), np.log(vals), 1)[0])
    target = -beta / (2 * alpha)
    return {"t": ts.tolist(), "norm": vals.tolist(), "slope": slope, "target": target,
            "rel_error": abs(slope - target) / abs(target)}
