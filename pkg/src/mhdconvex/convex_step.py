"""One convex-integration step q -> q+1 and its verification.

Time dependence is handled lazily: a state is a *provider* that evaluates
(u, B, R^u, R^B, z) at any time t.  Level 0 is stored in closed form as
modal fields with piecewise-linear coefficients, so its space-time
mollification is exact (kernel moments on each time cell).  Level q+1 is
evaluated pointwise in time from the mollified level-q data.

Products of non-band-limited fields use collocation on the grid, the same
bilinear form in the stresses and in the residual, so the algebraic
cancellations hold pointwise.  Band-limited products (level 0) are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .amplitudes import build_amplitudes, frob, theta_cutoff, theta_cutoff_d
from .building_blocks import IterParams, ShearFlows, temporal_blocks
from .geometry import GeometricBasis, build_geometric_basis, estimate_m_star
from .stochastic import NoiseState, truncate_noise
from .torus_spectral import (ModalField, TimeKernel, TimeSeriesField, embed_spectral,
                             radial_bump_symbol, torus)

_EYE = np.eye(3)


# small tensor helpers ---------------------------------------------------------------

def outer(a, b):
    return a[:, None] * b[None, :]


def traceless(T):
    tr = np.einsum("ii...->...", T) / 3.0
    return T - _EYE.reshape((3, 3) + (1,) * (T.ndim - 2)) * tr


def _const_matvec(M, V):
    return np.einsum("ij,j...->i...", M, V)


def _zero_mean(F):
    F = F.copy()
    F[..., 0, 0, 0] = 0.0
    return F


def hm1_norm(T, F):
    """H^{-1} norm of a spectral (vector) array, full torus volume."""
    w = np.full(T.spec_shape[-1], 2.0)
    w[0] = 1.0
    if T.n % 2 == 0:
        w[-1] = 1.0
    dens = np.abs(F) ** 2 / (1.0 + T.k2)
    dens = dens.reshape((-1,) + T.spec_shape).sum(axis=0)
    return float(math.sqrt((2 * np.pi) ** 3 * np.sum(dens * w)))


def _resample(f: ModalField, times):
    coef = np.stack([f.coef_at(t) for t in times])
    return ModalField(f.xi, f.E, times, coef)


def _merged_times(fields):
    ts = np.unique(np.concatenate([f.times for f in fields]))
    return ts


# level-q sources ------------------------------------------------------------------------

class Level0Source:
    """Closed-form level-0 data on a small grid that resolves all products.

    v, H, z1, z2 are modal fields; on a time cell with local coordinate
    theta in [0, 1] each is affine in theta and

        R^u_0 = R^u(d_t v + nu(-Delta)^alpha v - z1) + (v+z1)o(v+z1) - (H+z2)o(H+z2),
        R^B_0 = R^B(d_t H + nu(-Delta)^alpha H - z2) + (H+z2)x(v+z1) - (v+z1)x(H+z2),

    is quadratic in theta.
    """

    def __init__(self, v: ModalField, h: ModalField, z1: ModalField, z2: ModalField, alpha, nu):
        ts = _merged_times([v, h, z1, z2])
        self.v, self.h, self.z1, self.z2 = (_resample(f, ts) for f in (v, h, z1, z2))
        self.times = ts
        self.alpha, self.nu = float(alpha), float(nu)
        self.bandwidth = max(f.bandwidth for f in (v, h, z1, z2))
        n0 = 8
        while n0 // 2 <= 2 * self.bandwidth:
            n0 *= 2
        self.n = n0
        self.torus = torus(n0)
        self.stress_bandwidth = 2 * self.bandwidth
        self._cells: dict = {}

    def _spec(self, f, c):
        return f.spectral(self.n, c)

    def linear_part(self, Fv, Fdv, Fz, magnetic):
        T = self.torus
        X = Fdv + self.nu * T.frac_lap_s(Fv, self.alpha) - Fz
        return T.inv_div_b_s(X) if magnetic else T.inv_div_u_s(X)

    def nonlinear(self, U, B):
        """Physical U, B -> spectral (traceless u-flux, B-flux)."""
        T = self.torus
        Nu = traceless(outer(U, U) - outer(B, B))
        Nb = outer(B, U) - outer(U, B)
        return T.fft(Nu), T.fft(Nb)

    def cell(self, i):
        if i in self._cells:
            return self._cells[i]
        T = self.torus
        ts = self.times
        dt = ts[i + 1] - ts[i]
        out = {}
        spec = {}
        for name, f in (("u", self.v), ("b", self.h), ("z1", self.z1), ("z2", self.z2)):
            c0, c1 = f.coef[i], f.coef[i + 1] - f.coef[i]
            spec[name] = (self._spec(f, c0), self._spec(f, c1))
            out[name] = list(spec[name])
        slope_v = spec["u"][1] / dt
        slope_h = spec["b"][1] / dt
        Lu = [self.linear_part(spec["u"][0], slope_v, spec["z1"][0], False),
              self.linear_part(spec["u"][1], 0 * slope_v, spec["z1"][1], False)]
        Lb = [self.linear_part(spec["b"][0], slope_h, spec["z2"][0], True),
              self.linear_part(spec["b"][1], 0 * slope_h, spec["z2"][1], True)]
        U0 = T.ifft(spec["u"][0] + spec["z1"][0])
        U1 = T.ifft(spec["u"][1] + spec["z1"][1])
        B0 = T.ifft(spec["b"][0] + spec["z2"][0])
        B1 = T.ifft(spec["b"][1] + spec["z2"][1])
        n00 = self.nonlinear(U0, B0)
        n11 = self.nonlinear(U1, B1)
        nab = self.nonlinear(U0 + U1, B0 + B1)
        cross = (nab[0] - n00[0] - n11[0], nab[1] - n00[1] - n11[1])
        out["Nu"] = [n00[0], cross[0], n11[0]]
        out["Nb"] = [n00[1], cross[1], n11[1]]
        out["Ru"] = [Lu[0] + n00[0], Lu[1] + cross[0], n11[0]]
        out["Rb"] = [Lb[0] + n00[1], Lb[1] + cross[1], n11[1]]
        self._cells[i] = out
        return out

    # pointwise evaluation on any grid n >= self.n
    def evaluate(self, t, n):
        T = self.torus
        cv, ch = self.v.coef_at(t), self.h.coef_at(t)
        cz1, cz2 = self.z1.coef_at(t), self.z2.coef_at(t)
        sv, sh = self.v.slope_at(t), self.h.slope_at(t)
        Fv, Fh = self._spec(self.v, cv), self._spec(self.h, ch)
        Fz1, Fz2 = self._spec(self.z1, cz1), self._spec(self.z2, cz2)
        Fdv, Fdh = self._spec(self.v, sv), self._spec(self.h, sh)
        U, B = T.ifft(Fv + Fz1), T.ifft(Fh + Fz2)
        Nu, Nb = self.nonlinear(U, B)
        Ru = self.linear_part(Fv, Fdv, Fz1, False) + Nu
        Rb = self.linear_part(Fh, Fdh, Fz2, True) + Nb
        if t < self.times[0] or t > self.times[-1]:
            Ru, Rb = 0 * Ru, 0 * Rb
        e = lambda F: embed_spectral(F, n)
        return {"u": e(Fv), "b": e(Fh), "z1": e(Fz1), "z2": e(Fz2), "du": e(Fdv), "db": e(Fdh),
                "Ru": e(Ru), "Rb": e(Rb)}


class SampledSource:
    """Level-q data sampled on a time grid, piecewise linear in time."""

    def __init__(self, times, samples, z1: ModalField, z2: ModalField, n):
        self.times = np.asarray(times, dtype=float)
        self.samples = samples          # name -> list of spectral arrays (u, b, Ru, Rb)
        self.z1, self.z2 = _resample(z1, self.times), _resample(z2, self.times)
        self.n = n
        self.torus = torus(n)
        self.stress_bandwidth = None
        self._cells: dict = {}

    def cell(self, i):
        if i in self._cells:
            return self._cells[i]
        T = self.torus
        out = {}
        for name in ("u", "b", "Ru", "Rb"):
            a, b = self.samples[name][i], self.samples[name][i + 1]
            out[name] = [a, b - a]
        for name, f in (("z1", self.z1), ("z2", self.z2)):
            c0, c1 = f.coef[i], f.coef[i + 1] - f.coef[i]
            out[name] = [f.spectral(self.n, c0), f.spectral(self.n, c1)]
        U0, U1 = T.ifft(out["u"][0] + out["z1"][0]), T.ifft(out["u"][1] + out["z1"][1])
        B0, B1 = T.ifft(out["b"][0] + out["z2"][0]), T.ifft(out["b"][1] + out["z2"][1])

        def nl(U, B):
            return T.fft(traceless(outer(U, U) - outer(B, B))), T.fft(outer(B, U) - outer(U, B))
        n00, n11, nab = nl(U0, B0), nl(U1, B1), nl(U0 + U1, B0 + B1)
        out["Nu"] = [n00[0], nab[0] - n00[0] - n11[0], n11[0]]
        out["Nb"] = [n00[1], nab[1] - n00[1] - n11[1], n11[1]]
        if len(self._cells) > 64:
            self._cells.pop(next(iter(self._cells)))
        self._cells[i] = out
        return out


class Mollifier:
    """(f *_x rho_ell) *_t theta_ell of a cell source, evaluated exactly."""

    def __init__(self, source, ell: float, n_target: int):
        if ell < 2 * np.pi / n_target:
            raise ValueError(f"mollification width {ell} below grid spacing {2 * np.pi / n_target:.4g}")
        self.source, self.ell, self.n = source, float(ell), n_target
        self.kernel = TimeKernel(ell)
        self.symbol = radial_bump_symbol(ell * source.torus.kabs) * source.torus.mask

    def at(self, t, names, deriv=False):
        ts = self.source.times
        acc = {k: 0.0 for k in names}
        i0 = max(int(np.searchsorted(ts, t - self.ell, side="right")) - 1, 0)
        for i in range(i0, len(ts) - 1):
            if ts[i] >= t:
                break
            mom = self.kernel.cell_moments(t, ts[i], ts[i + 1], 2, deriv)
            if not np.any(mom):
                continue
            cell = self.source.cell(i)
            for k in names:
                for j, c in enumerate(cell[k]):
                    acc[k] = acc[k] + mom[j] * c
        out = {}
        for k in names:
            v = acc[k]
            if np.isscalar(v):
                shape = (3, 3) if k[0] in "RN" else (3,)
                v = np.zeros(shape + self.source.torus.spec_shape, dtype=complex)
            out[k] = embed_spectral(v * self.symbol, self.n)
        return out


# relaxed states --------------------------------------------------------------------------

@dataclass
class RelaxedState:
    """(u~_q, B~_q, R^u_q, R^B_q) with its noise, evaluated lazily in time."""

    q: int
    params: IterParams
    n: int
    times: np.ndarray
    provider: object
    noise: NoiseState
    meta: dict = field(default_factory=dict)

    def fields(self, t):
        return self.provider.fields(t)

    def stress(self, t):
        return self.provider.stress(t)

    def noise_at(self, t):
        return self.provider.noise(t)

    def sample(self, times=None):
        """TimeSeriesField samples of u, B, R^u, R^B (physical)."""
        times = self.times if times is None else np.asarray(times)
        T = torus(self.n)
        u, b, ru, rb = [], [], [], []
        for t in times:
            U, B = self.fields(t)
            Ru, Rb = self.stress(t)
            u.append(T.ifft(U))
            b.append(T.ifft(B))
            ru.append(T.ifft(Ru))
            rb.append(T.ifft(Rb))
        return {k: TimeSeriesField(np.array(times), np.stack(v)) for k, v in
                (("u_tilde", u), ("b_tilde", b), ("r_u", ru), ("r_b", rb))}

    def pressure(self, t):
        """P with Delta P = div div(R^u - flux), the gradient part of the u-equation."""
        T = torus(self.n)
        U, B = self.fields(t)
        Ru, _ = self.stress(t)
        z1, z2 = self.noise_at(t)
        Up, Bp = T.ifft(U + z1), T.ifft(B + z2)
        X = Ru - T.fft(outer(Up, Up) - outer(Bp, Bp))
        kv = T.kvec * T.mask
        P = np.einsum("i...,j...,ij...->...", kv, kv, X) * T.inv_k2
        return T.ifft(P)


class Level0Provider:
    def __init__(self, source: Level0Source, n):
        self.source, self.n = source, n

    def fields(self, t):
        e = self.source.evaluate(t, self.n)
        return e["u"], e["b"]

    def dfields(self, t):
        e = self.source.evaluate(t, self.n)
        return e["du"], e["db"]

    def stress(self, t):
        e = self.source.evaluate(t, self.n)
        return e["Ru"], e["Rb"]

    def noise(self, t):
        e = self.source.evaluate(t, self.n)
        return e["z1"], e["z2"]


class SampledProvider:
    """Piecewise-linear interpolation of stored samples (a reloaded level q >= 1)."""

    def __init__(self, source: SampledSource):
        self.source = source
        self.n = source.n

    def _lin(self, name, t):
        ts = self.source.times
        s = self.source.samples[name]
        if t < ts[0] or t > ts[-1]:
            return 0 * s[0]
        i = int(min(max(np.searchsorted(ts, t, side="right") - 1, 0), len(ts) - 2))
        th = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - th) * s[i] + th * s[i + 1]

    def fields(self, t):
        return self._lin("u", t), self._lin("b", t)

    def stress(self, t):
        return self._lin("Ru", t), self._lin("Rb", t)

    def noise(self, t):
        return self.source.z1.at(self.n, t), self.source.z2.at(self.n, t)


def state_from_samples(q, params: IterParams, n, times, samples, noise: NoiseState) -> RelaxedState:
    """Relaxed state at level q from spectral samples of u, B, R^u, R^B."""
    _, zq = truncate_noise(noise, params.lambda_q, n)
    src = SampledSource(times, samples, zq[1], zq[2], n)
    return RelaxedState(q, params, n, np.asarray(times, dtype=float), SampledProvider(src), noise,
                        {"source": "samples"})


def _check_modal_input(f: ModalField, name):
    if f.divergence_error() > 1e-12 * max(1.0, float(np.max(np.abs(f.E), initial=0.0))):
        raise ValueError(f"{name} is not divergence-free")
    if len(f.xi) and f.times[0] == 0.0 and np.max(np.abs(f.coef[0])) > 0:
        raise ValueError(f"{name} must vanish at t = 0")


def init_state(v: ModalField, h: ModalField, noise: NoiseState, params: IterParams, n: int) -> RelaxedState:
    """The q = 0 relaxed state built from smooth (v, H) and the noise."""
    _check_modal_input(v, "v")
    _check_modal_input(h, "h")
    _, zq = truncate_noise(noise, params.lambda_q, n)
    src = Level0Source(v, h, zq[1], zq[2], params.alpha, params.nu)
    if src.bandwidth >= n // 2:
        raise ValueError("level-0 data not resolved on the state grid")
    prov = Level0Provider(src, n)
    return RelaxedState(0, params, n, src.times, prov, noise, {"source": "level0"})


def level0_oracle_single_mode(v: ModalField, t, alpha, nu, n):
    """Independent R^u_0 for v = one real mode, H = 0, zero noise.

    With v = c(t) Re(E e^{i xi x}): d_t v + nu(-Delta)^alpha v has the same
    mode with coefficient c' + nu |xi|^{2 alpha} c; R^u of a single mode
    A cos(xi x + phi) is (xi (x) A + A (x) xi)/|xi|^2 sin(...) symmetrised
    trace-free, computed here directly on the grid from its closed form.
    """
    if len(v.xi) != 1:
        raise ValueError("oracle handles exactly one mode")
    T = torus(n)
    X = T.coords()
    xi = v.xi[0].astype(float)
    E = v.E[0]
    c, s = v.coef_at(t)[0], v.slope_at(t)[0]
    k2 = float(xi @ xi)
    amp = s + nu * k2 ** float(alpha) * c
    ph = xi[0] * X[0] + xi[1] * X[1] + xi[2] * X[2]
    # f = amp Re(E e^{i ph}); R^u f with div = f for a mode: Re(-i E e^{i ph}) (xi (x) e + e (x) xi)/k2 style
    # solve div R = f for R = Re(S e^{i ph}) with S = -i (xi E^T + E xi^T)/k2 (div E . xi = 0)
    S = -1j * (np.outer(xi, E) + np.outer(E, xi)) / k2 * amp
    R_lin = np.real(S[:, :, None, None, None] * np.exp(1j * ph)[None, None])
    vv = c * np.real(E[:, None, None, None] * np.exp(1j * ph)[None])
    R_nl = outer(vv, vv)
    R_nl = R_nl - _EYE[:, :, None, None, None] * np.einsum("ii...->...", R_nl) / 3
    return R_lin + R_nl


# perturbations and stresses -------------------------------------------------------------------

@dataclass
class Perturbation:
    """Snapshot at one time; untilded parts and tilded totals (spectral)."""

    t: float
    theta: float
    dtheta: float
    w_p: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    d_p: np.ndarray
    d_c: np.ndarray
    d_o: np.ndarray
    dt_w_pc: np.ndarray | None = None
    dt_d_pc: np.ndarray | None = None

    @property
    def w(self):
        return self.theta * (self.w_p + self.w_c) + self.theta**2 * self.w_o

    @property
    def d(self):
        return self.theta * (self.d_p + self.d_c) + self.theta**2 * self.d_o


STRESS_PARTS = ("lin", "corr", "com1", "com2", "osc1", "osc2", "osc3")


@dataclass
class StressBreakdown:
    t: float
    u: dict
    b: dict

    def total_u(self):
        return sum(self.u[k] for k in STRESS_PARTS)

    def total_b(self):
        return sum(self.b[k] for k in STRESS_PARTS)


class IterationStep:
    """Evaluator of the level-(q+1) state built from a level-q source."""

    def __init__(self, state: RelaxedState, source, basis: GeometricBasis | None = None,
                 harmonics=None):
        self.state = state
        self.params = p = state.params
        self.n = n = state.n
        self.T = torus(n)
        self.basis = basis or build_geometric_basis()
        self.source = source
        self.moll = Mollifier(source, p.ell, n)
        self.blocks = temporal_blocks(self.basis, p)
        probe = ShearFlows(self.basis, p, n, harmonics=1)
        if harmonics is None and source.stress_bandwidth is not None:
            harmonics = (n // 2 - 1 - source.stress_bandwidth) // (2 * probe.mmax)
        self.flows = ShearFlows(self.basis, p, n, harmonics=harmonics)
        self.nu_count = len(self.basis.lambda_u)
        self.delta = p.delta_next
        _, zq = truncate_noise(state.noise, p.with_level(p.q + 1).lambda_q, n)
        self.z_next = zq
        self.frames = []
        for idx, fr in enumerate(self.basis.frames):
            _, k1, k2 = fr.arrays()
            mag = idx >= self.nu_count
            Mu = np.outer(k1, k1) - (np.outer(k2, k2) if mag else 0.0)
            Mb = np.outer(k2, k1) - np.outer(k1, k2) if mag else None
            phi = self.flows.profile(idx)
            phi2 = phi**2
            self.frames.append({"k1": k1, "k2": k2, "mag": mag, "Mu": Mu, "Mb": Mb,
                                "phi": phi, "Phi": self.flows.profile(idx, which="Phi"),
                                "phi2_osc": phi2 - phi2.mean()})
        self._memo: dict = {}

    # mollified data
    def mollified(self, t, rates=False, nonlinear=False):
        key = ("m", t, rates, nonlinear)
        if key in self._memo:
            return self._memo[key]
        out = self.moll.at(t, ("u", "b", "z1", "z2", "Ru", "Rb") + (("Nu", "Nb") if nonlinear else ()))
        if rates:
            d = self.moll.at(t, ("Ru", "Rb"), deriv=True)
            out["dRu"], out["dRb"] = d["Ru"], d["Rb"]
        self._remember(key, out)
        return out

    def _remember(self, key, val):
        if len(self._memo) > 8:
            self._memo.pop(next(iter(self._memo)))
        self._memo[key] = val

    def amplitudes(self, t, mol, rates=False):
        T = self.T
        Ru, Rb = T.ifft(mol["Ru"]), T.ifft(mol["Rb"])
        dRu = T.ifft(mol["dRu"]) if rates else None
        dRb = T.ifft(mol["dRb"]) if rates else None
        return build_amplitudes(Ru, Rb, self.delta, self.basis, dRu, dRb)

    def _curlcurl(self, S, k):
        T = self.T
        kv = T.kvec * T.mask
        kk = np.einsum("i...,i->...", kv, k)
        return (T.k2 * T.mask * S)[None] * k[:, None, None, None] - kv * (kk * S)[None]

    def perturbation(self, t, rates=False, mol=None, amps=None) -> Perturbation:
        p = self.params
        T = self.T
        th = float(theta_cutoff(t, p.varsigma))
        dth = float(theta_cutoff_d(t, p.varsigma))
        mol = mol or self.mollified(t, rates=rates)
        amps = amps or self.amplitudes(t, mol, rates=rates)
        zero = np.zeros((3,) + T.spec_shape, dtype=complex)
        w_pc, d_pc, w_o, d_o = zero.copy(), zero.copy(), zero.copy(), zero.copy()
        dw, dd = zero.copy(), zero.copy()
        wp = np.zeros((3,) + T.shape)
        dp = np.zeros((3,) + T.shape)
        sc = self.flows.wc_scale
        sig = p.sigma
        for idx, fr in enumerate(self.frames):
            a2 = amps.a2[idx]
            g = float(self.blocks.g(idx, t))
            if g != 0.0 or (rates and float(self.blocks.dg(idx, t)) != 0.0):
                a = np.sqrt(a2)
                S = T.fft(sc * a * g * fr["Phi"])
                w_pc += self._curlcurl(S, fr["k1"])
                wp += fr["k1"][:, None, None, None] * (a * g * fr["phi"])
                if fr["mag"]:
                    d_pc += self._curlcurl(S, fr["k2"])
                    dp += fr["k2"][:, None, None, None] * (a * g * fr["phi"])
                if rates:
                    adot = amps.da2[idx] / (2 * a)
                    dg = float(self.blocks.dg(idx, t))
                    Sd = T.fft(sc * (adot * g + a * dg) * fr["Phi"])
                    dw += self._curlcurl(Sd, fr["k1"])
                    if fr["mag"]:
                        dd += self._curlcurl(Sd, fr["k2"])
            h = float(self.blocks.h(idx, t))
            if h != 0.0:
                grad = T.ik * T.fft(a2)
                w_o += -h / sig * T.leray_s(_zero_mean(_const_matvec(fr["Mu"], grad)))
                if fr["mag"]:
                    d_o += -h / sig * T.leray_s(_zero_mean(_const_matvec(fr["Mb"], grad)))
        w_c = w_pc - T.fft(wp)
        d_c = d_pc - T.fft(dp)
        out = Perturbation(t, th, dth, T.fft(wp), w_c, w_o, T.fft(dp), d_c, d_o)
        if rates:
            out.dt_w_pc = dth * w_pc + th * dw
            out.dt_d_pc = dth * d_pc + th * dd
        return out

    # provider interface
    def fields(self, t):
        mol = self.mollified(t)
        pert = self.perturbation(t, rates=False, mol=mol)
        return mol["u"] + pert.w, mol["b"] + pert.d

    def noise(self, t):
        return self.z_next[1].at(self.n, t), self.z_next[2].at(self.n, t)

    def stress(self, t):
        br = self.breakdown(t)
        return br.total_u(), br.total_b()

    def breakdown(self, t) -> StressBreakdown:
        key = ("b", t)
        if key in self._memo:
            return self._memo[key]
        p = self.params
        T = self.T
        mol = self.mollified(t, rates=True, nonlinear=True)
        amps = self.amplitudes(t, mol, rates=True)
        pt = self.perturbation(t, rates=True, mol=mol, amps=amps)
        th, dth, sig = pt.theta, pt.dtheta, p.sigma
        Ru_, Rb_ = T.inv_div_u_s, T.inv_div_b_s
        ph = T.ifft
        z1n, z2n = self.noise(t)
        Ul, Bl = ph(mol["u"] + mol["z1"]), ph(mol["b"] + mol["z2"])
        z1l, z2l = ph(mol["z1"]), ph(mol["z2"])
        z1p, z2p = ph(z1n), ph(z2n)
        W, D = pt.w, pt.d
        w, d = ph(W), ph(D)
        wp, dp = th * ph(pt.w_p), th * ph(pt.d_p)
        wco, dco = w - wp, d - dp
        up, bp = ph(mol["u"]) + w, ph(mol["b"]) + d
        lap = lambda F: p.nu * T.frac_lap_s(F, p.alpha)
        U, B = {}, {}
        # linear
        U["lin"] = Ru_(pt.dt_w_pc + lap(W) + mol["z1"] - z1n) + T.fft(traceless(
            outer(Ul, w) + outer(w, Ul) - outer(Bl, d) - outer(d, Bl)))
        B["lin"] = Rb_(pt.dt_d_pc + lap(D) + mol["z2"] - z2n) + T.fft(
            outer(Bl, w) - outer(w, Bl) + outer(d, Ul) - outer(Ul, d))
        # correctors
        U["corr"] = T.fft(traceless(outer(wp, wco) + outer(wco, w) - outer(dp, dco) - outer(dco, d)))
        B["corr"] = T.fft(outer(dp, wco) + outer(dco, w) - outer(wp, dco) - outer(wco, d))
        # commutators
        U["com1"] = T.fft(traceless(outer(Ul, Ul) - outer(Bl, Bl))) - mol["Nu"]
        B["com1"] = T.fft(outer(Bl, Ul) - outer(Ul, Bl)) - mol["Nb"]
        U["com2"] = T.fft(traceless(
            outer(up, z1p) + outer(z1p, up) - outer(z1l, up) - outer(up, z1l)
            - outer(bp, z2p) - outer(z2p, bp) + outer(z2l, bp) + outer(bp, z2l)
            + outer(z1p, z1p) - outer(z2p, z2p) - outer(z1l, z1l) + outer(z2l, z2l)))
        B["com2"] = T.fft(
            outer(bp, z1p) - outer(z1p, bp) + outer(z1l, bp) - outer(bp, z1l)
            + outer(z2p, up) - outer(up, z2p) + outer(up, z2l) - outer(z2l, up)
            + outer(z1l, z2l) - outer(z2l, z1l) + outer(z2p, z1p) - outer(z1p, z2p))
        # oscillation
        d_th2 = 2 * th * dth
        U["osc1"] = (1 - th**2) * mol["Ru"] + Ru_(d_th2 * pt.w_o)
        B["osc1"] = (1 - th**2) * mol["Rb"] + Rb_(d_th2 * pt.d_o)
        zero = np.zeros((3,) + T.spec_shape, dtype=complex)
        o2u, o2b, o3u, o3b = zero.copy(), zero.copy(), zero.copy(), zero.copy()
        for idx, fr in enumerate(self.frames):
            g = float(self.blocks.g(idx, t))
            grad = T.ik * T.fft(amps.a2[idx])
            if g != 0.0:
                gu = ph(_const_matvec(fr["Mu"], grad))
                o2u += g**2 * _zero_mean(T.fft(fr["phi2_osc"] * gu))
                if fr["mag"]:
                    gb = ph(_const_matvec(fr["Mb"], grad))
                    o2b += g**2 * T.leray_s(_zero_mean(T.fft(fr["phi2_osc"] * gb)))
            h = float(self.blocks.h(idx, t))
            if h != 0.0:
                dgrad = T.ik * T.fft(amps.da2[idx])
                o3u += h * _zero_mean(_const_matvec(fr["Mu"], dgrad))
                if fr["mag"]:
                    o3b += h * T.leray_s(_zero_mean(_const_matvec(fr["Mb"], dgrad)))
        U["osc2"] = th**2 * Ru_(o2u)
        B["osc2"] = th**2 * Rb_(o2b)
        U["osc3"] = -th**2 / sig * Ru_(o3u)
        B["osc3"] = -th**2 / sig * Rb_(o3b)
        br = StressBreakdown(t, U, B)
        self._remember(key, br)
        return br

    def near_initial_closed_form(self, t):
        """Stresses for t <= varsigma/2, where w = d = 0, written out directly."""
        T = self.T
        mol = self.mollified(t, rates=False, nonlinear=True)
        z1n, z2n = self.noise(t)
        ph = T.ifft
        u, b = ph(mol["u"]), ph(mol["b"])
        z1l, z2l, z1p, z2p = ph(mol["z1"]), ph(mol["z2"]), ph(z1n), ph(z2n)
        Ul, Bl = u + z1l, b + z2l
        U = {
            "lin": T.inv_div_u_s(mol["z1"] - z1n),
            "osc1": mol["Ru"],
            "com1": T.fft(traceless(outer(Ul, Ul) - outer(Bl, Bl))) - mol["Nu"],
            "com2": T.fft(traceless(outer(u, z1p) + outer(z1p, u) - outer(z1l, u) - outer(u, z1l)
                                    - outer(b, z2p) - outer(z2p, b) + outer(z2l, b) + outer(b, z2l)
                                    + outer(z1p, z1p) - outer(z2p, z2p) - outer(z1l, z1l) + outer(z2l, z2l))),
        }
        B = {
            "lin": T.inv_div_b_s(mol["z2"] - z2n),
            "osc1": mol["Rb"],
            "com1": T.fft(outer(Bl, Ul) - outer(Ul, Bl)) - mol["Nb"],
            "com2": T.fft(outer(b, z1p) - outer(z1p, b) + outer(z1l, b) - outer(b, z1l)
                          + outer(z2p, u) - outer(u, z2p) + outer(u, z2l) - outer(z2l, u)
                          + outer(z1l, z2l) - outer(z2l, z1l) + outer(z2p, z1p) - outer(z1p, z2p)),
        }
        return U, B


def near_initial_comparison(step: IterationStep, t):
    """Term-by-term max difference between the assembly and the closed form."""
    if t > step.params.varsigma / 2:
        raise ValueError("closed form applies only for t <= varsigma/2")
    br = step.breakdown(t)
    U, B = step.near_initial_closed_form(t)
    T = step.T
    diffs = {}
    for side, got, ref in (("u", br.u, U), ("b", br.b, B)):
        scale = max(float(np.max(np.abs(T.ifft(v)))) for v in ref.values()) or 1.0
        for k in STRESS_PARTS:
            r = ref.get(k)
            a = T.ifft(got[k])
            e = float(np.max(np.abs(a - (T.ifft(r) if r is not None else 0.0))))
            diffs[f"{side}.{k}"] = e / scale
        tot_ref = T.ifft(sum(ref.values()))
        tot = T.ifft(br.total_u() if side == "u" else br.total_b())
        diffs[f"{side}.total"] = float(np.max(np.abs(tot - tot_ref))) / scale
    return diffs


# residual --------------------------------------------------------------------------------

def _fd4(f, t, h):
    a, b, c, d = f(t + 2 * h), f(t + h), f(t - h), f(t - 2 * h)
    return tuple((-a[i] + 8 * b[i] - 8 * c[i] + d[i]) / (12 * h) for i in range(len(a)))


def residual_at(state: RelaxedState, t, h=None):
    """Leray-projected residual of the relaxed system at time t.

    Returns relative (to the largest projected term) and absolute H^{-1}
    residuals for both equations.  ``h`` is the central-difference step;
    None uses the exact slope when the provider has one.
    """
    p = state.params
    T = torus(state.n)
    U, B = state.fields(t)
    if h is None:
        if not hasattr(state.provider, "dfields"):
            raise ValueError("provider has no exact time derivative; pass a difference step")
        dU, dB = state.provider.dfields(t)
    else:
        if t - 2 * h < 0 or t + 2 * h > p.T:
            raise ValueError("difference stencil leaves [0, T]; one-sided stencils are not used")
        dU, dB = _fd4(state.fields, t, h)
    Ru, Rb = state.stress(t)
    z1, z2 = state.noise_at(t)
    Up, Bp = T.ifft(U + z1), T.ifft(B + z2)
    out = {}
    for name, dF, F, z, flux, R in (
            ("u", dU, U, z1, outer(Up, Up) - outer(Bp, Bp), Ru),
            ("b", dB, B, z2, outer(Bp, Up) - outer(Up, Bp), Rb)):
        terms = [dF, p.nu * T.frac_lap_s(F, p.alpha), -z, T.tensor_div_s(T.fft(flux)), -T.tensor_div_s(R)]
        proj = [T.leray_s(x) for x in terms]
        res = sum(proj)
        scale = max(hm1_norm(T, x) for x in proj)
        a = hm1_norm(T, res)
        out[f"res_{name}"] = a / scale if scale > 0 else 0.0
        out[f"abs_{name}"] = a
        out[f"scale_{name}"] = scale
    return out


def residual_check(state: RelaxedState, times, steps=None):
    """Max residual over test times; with several steps also the FD order."""
    steps = [None] if steps is None else list(steps)
    rows = []
    for t in times:
        row = {"t": float(t), "by_step": []}
        for h in steps:
            r = residual_at(state, t, h)
            row["by_step"].append({"h": h, **r})
        rows.append(row)
    final = [r["by_step"][-1] for r in rows]
    out = {"rows": rows,
           "res_u": max(r["res_u"] for r in final),
           "res_b": max(r["res_b"] for r in final)}
    if len(steps) > 1 and steps[0] is not None:
        orders = []
        for r in rows:
            hs = np.array([s["h"] for s in r["by_step"]])
            es = np.array([max(s["res_u"], s["res_b"]) for s in r["by_step"]])
            orders.append(float(np.log(es[-2] / es[-1]) / np.log(hs[-2] / hs[-1])))
        out["orders"] = orders
    return out


# symmetry and invariants ---------------------------------------------------------------------

def symmetry_violations(T, Ru, Rb):
    ru, rb = T.ifft(Ru), T.ifft(Rb)
    return {"u_sym": float(np.max(np.abs(ru - np.swapaxes(ru, 0, 1)))),
            "u_trace": float(np.max(np.abs(np.einsum("ii...->...", ru)))),
            "b_skew": float(np.max(np.abs(rb + np.swapaxes(rb, 0, 1))))}


def perturbation_invariants(step: IterationStep, t):
    T = step.T
    pt = step.perturbation(t, rates=False)
    scale = max(1.0, float(np.max(np.abs(T.ifft(pt.w_p)))))
    dv = lambda F: float(np.max(np.abs(T.ifft(T.div_s(F))))) / scale
    return {"div_w_pc": dv(pt.w_p + pt.w_c), "div_d_pc": dv(pt.d_p + pt.d_c),
            "div_w_o": dv(pt.w_o), "div_d_o": dv(pt.d_o),
            "div_w": dv(pt.w), "div_d": dv(pt.d),
            "mean_w": float(np.max(np.abs(pt.w[:, 0, 0, 0]))) / scale,
            "mean_d": float(np.max(np.abs(pt.d[:, 0, 0, 0]))) / scale,
            "theta": pt.theta}


def corrector_identity(step: IterationStep, t, amplitudes=None):
    """Check w^p + w^c = sum curlcurl(a g W^c) with w^c from its product-rule form.

    ``amplitudes`` is an optional list of physical amplitude fields, one per
    frame; by default the pipeline amplitudes at time t are used.  The
    identity is exact on the grid when every a W^c is resolved.
    """
    T = step.T
    if amplitudes is None:
        mol = step.mollified(t)
        amps = step.amplitudes(t, mol)
        amplitudes = [np.sqrt(x) for x in amps.a2]
    sc = step.flows.wc_scale
    out = {}
    for which, frames in (("w", list(enumerate(step.frames))),
                          ("d", [(i, f) for i, f in enumerate(step.frames) if f["mag"]])):
        lhs = np.zeros((3,) + T.shape)
        rhs = np.zeros((3,) + T.spec_shape, dtype=complex)
        div = np.zeros(T.spec_shape, dtype=complex)
        for idx, fr in frames:
            g = float(step.blocks.g(idx, t))
            if g == 0.0:
                continue
            vec = fr["k1"] if which == "w" else fr["k2"]
            a = amplitudes[idx]
            A = T.fft(a)
            ga = T.ifft(T.grad_s(A))
            Wc = sc * vec[:, None, None, None] * fr["Phi"]
            cWc = T.ifft(T.curl_s(T.fft(Wc)))
            wc = g * (np.cross(ga, cWc, axis=0) + T.ifft(T.curl_s(T.fft(np.cross(ga, Wc, axis=0)))))
            wp = a * g * vec[:, None, None, None] * fr["phi"]
            lhs += wp + wc
            rhs += step._curlcurl(T.fft(sc * a * g * fr["Phi"]), vec)
        L = T.fft(lhs)
        scale = max(1e-300, float(np.max(np.abs(lhs))))
        out[f"{which}_identity"] = float(np.max(np.abs(T.ifft(L - rhs)))) / scale if np.any(lhs) else 0.0
        out[f"{which}_div"] = float(np.max(np.abs(T.ifft(T.div_s(L))))) / scale if np.any(lhs) else 0.0
    return out


# driver ------------------------------------------------------------------------------------------

def sampled_source(state: RelaxedState, times=None) -> SampledSource:
    times = state.times if times is None else np.asarray(times)
    samples = {"u": [], "b": [], "Ru": [], "Rb": []}
    for t in times:
        U, B = state.fields(t)
        Ru, Rb = state.stress(t)
        for k, v in (("u", U), ("b", B), ("Ru", Ru), ("Rb", Rb)):
            samples[k].append(v)
    _, zq = truncate_noise(state.noise, state.params.lambda_q, state.n)
    return SampledSource(times, samples, zq[1], zq[2], state.n)


def source_for(state: RelaxedState, times=None):
    if isinstance(state.provider, Level0Provider):
        return state.provider.source
    return sampled_source(state, times)


def step(state: RelaxedState, basis=None, harmonics=None, diag_times=None, sample_times=None):
    """Mollify -> amplitudes -> perturbations -> stresses; returns the new level."""
    src = source_for(state, sample_times)
    evaluator = IterationStep(state, src, basis, harmonics)
    new_params = state.params.with_level(state.q + 1)
    new = RelaxedState(state.q + 1, new_params, state.n, np.asarray(src.times), evaluator, state.noise,
                       {"source": "step", "harmonics": evaluator.flows.J})
    evaluator.params = state.params
    out = {"new_state": new, "step": evaluator}
    if diag_times is not None:
        out["diagnostics"] = diagnostics(new, diag_times, previous=state)
    return out


def _l1(T, R):
    return float((2 * np.pi) ** 3 * np.mean(frob(T.ifft(R))))


def diagnostics(state: RelaxedState, times, previous: RelaxedState | None = None, gamma=1.0, s=0.0, p=2.0):
    """J_q, J~_q, perturbation norms, decay ratios and the constants M, M*."""
    T = torus(state.n)
    times = np.asarray(times, dtype=float)
    l1 = np.array([_l1(T, Ru) + _l1(T, Rb) for Ru, Rb in (state.stress(t) for t in times)])
    J = float(l1.max())
    Jt = float(np.trapezoid(l1, times)) if len(times) > 1 else 0.0
    out = {"level": state.q, "J": J, "J_tilde": Jt, "times": times.tolist(), "l1_by_time": l1.tolist()}
    basis = build_geometric_basis()
    out["M_star"] = float(estimate_m_star(basis))
    if previous is not None:
        lp = np.array([_l1(T, Ru) + _l1(T, Rb) for Ru, Rb in (previous.stress(t) for t in times)])
        Jt_prev = float(np.trapezoid(lp, times)) if len(times) > 1 else 0.0
        out["J_prev"], out["J_tilde_prev"] = float(lp.max()), Jt_prev
        out["decay_ratio"] = Jt / Jt_prev if Jt_prev > 0 else math.inf
        pw = []
        for t in times:
            U, B = state.fields(t)
            U0, B0 = previous.fields(t)
            wv, dv = T.ifft(U - U0), T.ifft(B - B0)
            pw.append((T.lp_norm(wv, 2), T.lp_norm(dv, 2),
                       T.sobolev_norm(wv, s, p) + T.sobolev_norm(dv, s, p)))
        pw = np.array(pw)
        l2tx = float(math.sqrt(np.trapezoid(pw[:, 0] ** 2 + pw[:, 1] ** 2, times)))
        l1l2 = float(np.trapezoid(pw[:, 0] + pw[:, 1], times))
        lgw = float(np.trapezoid(pw[:, 2] ** gamma, times) ** (1 / gamma))
        par = state.params
        out["perturbation"] = {"L2_tx": l2tx, "L1t_L2x": l1l2, f"L{gamma}_W{s},{p}": lgw,
                               "delta_next": par.delta_q, "ratio_L2_vs_sqrt_delta": l2tx / math.sqrt(par.delta_q)}
    z = state.noise
    out["M"] = float(np.sqrt(np.sum(z.z_det[1].coef[0] ** 2)) + np.sqrt(np.sum(z.z_det[2].coef[0] ** 2)))
    out["noise_trace"] = [z.model.trace(1), z.model.trace(2)]
    return out


def causality_fingerprint(state: RelaxedState, times):
    """Hash of all fields at the given times, for bit-identity comparisons."""
    import hashlib
    h = hashlib.sha256()
    for t in times:
        for arr in (*state.fields(t), *state.stress(t)):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
