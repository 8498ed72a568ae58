"""Spectral Galerkin solver for the linearized stochastic MHD system.

The unknowns are (v~_n, H~_n) in H_n = span{a_1..a_n}, where a_i are the
real divergence-free Fourier modes of the noise module (Stokes
eigenfunctions on T^3, eigenvalue |xi|^2).  With K_w(t) the matrix of
f -> P_n((w_n . grad) f) on H_n the coefficient system reads

    d/dt v = -L v - K_u v + K_B h + F_v,
    d/dt h = -L h - K_u h + K_B v + F_h,

with L = nu |xi|^{2 alpha} diagonal, F_v = -P_n((u_n.grad) z1 - (B_n.grad) z2)
and F_h = -P_n((u_n.grad) z2 - (B_n.grad) z1).  The transport matrices are
assembled exactly from the Fourier coefficients of the advecting fields
(triad sums), so they are skew whenever u_n, B_n are divergence free.

Time stepping is Strang splitting: an exact half step of the fractional
heat flow, an implicit-midpoint step of the skew transport plus forcing,
another exact half step.  Implicit midpoint keeps |X|^2 invariant under a
skew generator, so the discrete energy ledger balances to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .stochastic import NoiseState, _mode_arrays, enumerate_wavevectors, project_onto_basis
from .torus_spectral import ModalField, TimeSeriesField, mollify_time_linear, radial_bump_symbol, torus

_VOL = (2 * np.pi) ** 3


class CFLError(ValueError):
    pass


# basis ------------------------------------------------------------------------------

class GalerkinBasis:
    """First ``n_modes`` real modes (xi, polarisation, cos/sin), ordered by |xi|."""

    def __init__(self, n_modes: int):
        if n_modes < 1:
            raise ValueError("n_modes must be positive")
        modes, k = [], 1.0
        while len(modes) < n_modes:
            modes = [(xi, p, c) for xi in enumerate_wavevectors(k) for p in (0, 1) for c in (0, 1)]
            k += 1.0
        self.modes = modes[:n_modes]
        self.n_modes = n_modes
        self.xi, self.E = _mode_arrays(self.modes)
        self.k2 = np.sum(self.xi.astype(float) ** 2, axis=1)
        self.kinf = int(np.max(np.abs(self.xi)))

    def eigenvalues(self, alpha, nu):
        return nu * self.k2 ** float(alpha)

    def grid(self, extra=0) -> int:
        """Smallest admissible grid resolving bandwidth kinf + extra exactly."""
        return _even(2 * (self.kinf + extra) + 2)

    def modal(self, coef):
        coef = np.asarray(coef, dtype=float)
        return ModalField(self.xi, self.E, [0.0, 1.0], np.stack([coef, coef]))

    def reconstruct(self, coef, n=None):
        """Physical field sum_i coef_i a_i on an n^3 grid."""
        n = self.grid() if n is None else n
        T = torus(n)
        return T.ifft(self.modal(coef).spectral(n, np.asarray(coef, dtype=float)))

    def permuted(self, perm):
        b = GalerkinBasis.__new__(GalerkinBasis)
        b.modes = [self.modes[i] for i in perm]
        b.n_modes = self.n_modes
        b.xi, b.E = self.xi[perm], self.E[perm]
        b.k2 = self.k2[perm]
        b.kinf = self.kinf
        return b


def project_pn(f, n_modes, basis: GalerkinBasis | None = None):
    """Coefficients <f, a_i>, i = 1..n, of a physical field f."""
    basis = GalerkinBasis(n_modes) if basis is None else basis
    n = np.shape(f)[-1]
    if basis.kinf >= n // 2:
        raise ValueError(f"grid {n} does not resolve the first {n_modes} modes")
    return project_onto_basis(np.asarray(f, dtype=float), basis.modes)


# advecting fields ------------------------------------------------------------------

def _cube_index(R):
    return np.arange(-R, R + 1)


class AdvectingField:
    """Fourier coefficients u^_k (k in [-R, R]^3) of a real field, piecewise
    linear in time.  f(x) = sum_k u^_k exp(i k . x) with x in [-pi, pi)^3.
    """

    def __init__(self, times, cube):
        self.times = np.asarray(times, dtype=float)
        self.cube = np.asarray(cube, dtype=complex)
        if self.cube.ndim != 5 or self.cube.shape[1] != 3:
            raise ValueError("cube must have shape (Nt, 3, m, m, m)")
        self.R = (self.cube.shape[-1] - 1) // 2
        self.series = TimeSeriesField(self.times, self.cube)

    @classmethod
    def zero(cls, R, times=(0.0, 1.0)):
        m = 2 * R + 1
        return cls(times, np.zeros((len(times), 3, m, m, m), dtype=complex))

    @classmethod
    def from_modal(cls, f: ModalField, R):
        m = 2 * R + 1
        cube = np.zeros((len(f.times), 3, m, m, m), dtype=complex)
        for k, (xi, E) in enumerate(zip(f.xi, f.E)):
            if np.max(np.abs(xi)) > R:
                continue
            i = tuple(int(x) + R for x in xi)
            j = tuple(-int(x) + R for x in xi)
            cube[(slice(None), slice(None)) + i] += 0.5 * f.coef[:, k, None] * E[None]
            cube[(slice(None), slice(None)) + j] += 0.5 * f.coef[:, k, None] * np.conj(E)[None]
        return cls(f.times, cube)

    @staticmethod
    def _extract(F, n, R):
        """Cube of actual-x coefficients from a grid rfft array."""
        if R >= n // 2:
            R_eff = n // 2 - 1
        else:
            R_eff = R
        m = 2 * R + 1
        out = np.zeros((3, m, m, m), dtype=complex)
        k = _cube_index(R_eff)
        KX, KY, KZ = np.meshgrid(k, k, k, indexing="ij")
        pos = KZ >= 0
        vals = np.empty((3,) + KX.shape, dtype=complex)
        vals[:, pos] = F[:, KX[pos] % n, KY[pos] % n, KZ[pos]]
        neg = ~pos
        vals[:, neg] = np.conj(F[:, -KX[neg] % n, -KY[neg] % n, -KZ[neg]])
        vals *= (-1.0) ** (KX + KY + KZ)
        s = slice(R - R_eff, R + R_eff + 1)
        out[:, s, s, s] = vals
        return out

    @classmethod
    def from_spectral(cls, times, frames, R):
        """From grid rfft arrays (the convention of ``torus_spectral``)."""
        frames = [np.asarray(F) for F in frames]
        n = frames[0].shape[-3]
        return cls(times, np.stack([cls._extract(F, n, R) for F in frames]))

    @classmethod
    def from_series(cls, series: TimeSeriesField, R):
        """From physical frames (Nt, 3, n, n, n)."""
        T = torus(series.frames.shape[-1])
        return cls.from_spectral(series.times, [T.fft(f) for f in series.frames], R)

    @classmethod
    def from_provider(cls, fn, times, R, which=0):
        """Sample ``fn(t)`` (returning spectral (u, B) pairs) at ``times``."""
        frames = [fn(t)[which] for t in times]
        return cls.from_spectral(times, frames, R)

    def divergence_error(self):
        k = _cube_index(self.R).astype(float)
        K = np.stack(np.meshgrid(k, k, k, indexing="ij"))
        d = np.einsum("i...,ti...->t...", K, self.cube)
        scale = max(float(np.max(np.abs(self.cube))) * max(self.R, 1), 1e-300)
        return float(np.max(np.abs(d))) / scale

    def restricted(self, R):
        if R > self.R:
            pad = R - self.R
            cube = np.pad(self.cube, [(0, 0), (0, 0)] + [(pad, pad)] * 3)
        else:
            s = slice(self.R - R, self.R + R + 1)
            cube = self.cube[:, :, s, s, s]
        return AdvectingField(self.times, cube)

    def mollified_at(self, t, width=0.0):
        """(u *_x rho_w) *_t theta_w at t; width 0 means plain interpolation."""
        if width <= 0:
            c = self.series.at(t)
        else:
            c = mollify_time_linear(self.series, width, t)
            k = _cube_index(self.R).astype(float)
            kk = np.sqrt(k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2)
            c = c * radial_bump_symbol(width * kk)
        return c

    def physical(self, c, n):
        """Physical field on an n^3 grid from a cube of coefficients."""
        R = self.R
        if R >= n // 2:
            raise ValueError(f"grid {n} does not resolve bandwidth {R}")
        full = np.zeros((3, n, n, n), dtype=complex)
        k = _cube_index(R)
        KX, KY, KZ = np.meshgrid(k, k, k, indexing="ij")
        sign = (-1.0) ** (KX + KY + KZ)
        full[:, KX % n, KY % n, KZ % n] = c * sign
        return np.fft.ifftn(full, axes=(-3, -2, -1), norm="forward").real

    def sup_norm_bound(self):
        """sum |u^_k| over the cube, an upper bound for sup_x |u|."""
        return float(np.max(np.sum(np.sqrt(np.sum(np.abs(self.cube) ** 2, axis=1)), axis=(1, 2, 3))))


def as_advecting(obj, R, times=(0.0, 1.0)) -> AdvectingField:
    if obj is None:
        return AdvectingField.zero(R, times)
    if isinstance(obj, AdvectingField):
        return obj.restricted(R)
    if isinstance(obj, ModalField):
        return AdvectingField.from_modal(obj, R)
    if isinstance(obj, TimeSeriesField):
        return AdvectingField.from_series(obj, R)
    raise TypeError(f"cannot use {type(obj).__name__} as an advecting field")


# transport matrices ---------------------------------------------------------------

class TriadTable:
    """Index tables for <(w . grad) Re(E_m e^{i xi_m x}), a_i> with w on a cube.

    For real w,
        <(w.grad) Re(E_m e_m), Re(E_i e_i)>
            = (2 pi)^3 / 2 Re sum_{s=+-1} i (w^_{-xi_m - s xi_i} . xi_m) (E_m . E_i^s),
    with E^+ = E and E^- = conj(E).
    """

    def __init__(self, xi_out, E_out, xi_in, E_in, R):
        self.R = R
        xo = np.asarray(xi_out, dtype=np.int64)
        xn = np.asarray(xi_in, dtype=np.int64)
        self.shape = (len(xo), len(xn))
        self.xi_in = xn.astype(float)
        self.idx, self.valid, self.pol = [], [], []
        for s, Eo in ((1, np.asarray(E_out)), (-1, np.conj(E_out))):
            k = -xn[None, :, :] - s * xo[:, None, :]
            ok = np.all(np.abs(k) <= R, axis=-1)
            kc = np.where(ok[..., None], k + R, 0)
            self.idx.append((kc[..., 0], kc[..., 1], kc[..., 2]))
            self.valid.append(ok)
            self.pol.append(np.einsum("mc,ic->im", np.asarray(E_in), Eo))

    def matrix(self, cube):
        out = np.zeros(self.shape, dtype=complex)
        for (ix, iy, iz), ok, pol in zip(self.idx, self.valid, self.pol):
            w = cube[:, ix, iy, iz]                     # (3, n_out, n_in)
            wd = np.einsum("cim,mc->im", w, self.xi_in)
            out += np.where(ok, 1j * wd * pol, 0.0)
        return 0.5 * _VOL * out.real


# configuration and state ---------------------------------------------------------

@dataclass
class GalerkinConfig:
    n_modes: int
    dt: float
    T: float = 1.0
    alpha: float = 1.0
    nu: float = 1.0
    u: object = None
    B: object = None
    mollification: float | None = None
    stiff_constant: float = 50.0
    transport_constant: float = 1.0

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if self.alpha < 1.0 - 1e-12 or self.nu <= 0:
            raise ValueError("need alpha >= 1 and nu > 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def width(self, adv: AdvectingField) -> float:
        if self.mollification is not None:
            return float(self.mollification)
        w = 1.0 / self.n_modes
        if len(adv.times) > 1:
            w = max(w, float(np.max(np.diff(adv.times))))
        return w


@dataclass
class LinearizedState:
    config: GalerkinConfig
    basis: GalerkinBasis
    times: np.ndarray
    v: np.ndarray                 # (Nt, n) coefficients of v~_n
    h: np.ndarray                 # (Nt, n) coefficients of H~_n
    ledger: dict = field(default_factory=dict)
    noise: object = None

    def fields(self, i, n=None):
        return self.basis.reconstruct(self.v[i], n), self.basis.reconstruct(self.h[i], n)

    def full_fields(self, i, n=None):
        """(v, H) = (v~_n + z1, H~_n + z2) on the grid."""
        n = self.basis.grid() if n is None else n
        v, h = self.fields(i, n)
        if self.noise is None:
            return v, h
        T = torus(n)
        t = self.times[i]
        return v + T.ifft(self.noise.z1.at(n, t)), h + T.ifft(self.noise.z2.at(n, t))

    def energy(self):
        return 0.5 * np.sum(self.v**2, axis=1), 0.5 * np.sum(self.h**2, axis=1)


class _System:
    """Assembled generator pieces for one configuration."""

    def __init__(self, config: GalerkinConfig, basis: GalerkinBasis, noise):
        self.config, self.basis = config, basis
        zf = [None, None] if noise is None else [noise.z1, noise.z2]
        self.z = zf
        kz = 0
        for f in zf:
            if f is not None and len(f.xi):
                kz = max(kz, f.bandwidth)
        R = basis.kinf + max(basis.kinf, kz)
        self.R = R
        times = (0.0, config.T)
        self.u = as_advecting(config.u, R, times)
        self.b = as_advecting(config.B, R, times)
        for name, a in (("u", self.u), ("B", self.b)):
            if a.divergence_error() > 1e-10:
                raise ValueError(f"advecting field {name} is not divergence free")
        self.width_u = config.width(self.u) if config.u is not None else 0.0
        self.width_b = config.width(self.b) if config.B is not None else 0.0
        self.lam = basis.eigenvalues(config.alpha, config.nu)
        self.tab = TriadTable(basis.xi, basis.E, basis.xi, basis.E, R)
        self.ztab = None
        if zf[0] is not None and len(zf[0].xi):
            self.ztab = TriadTable(basis.xi, basis.E, zf[0].xi, zf[0].E, R)
        self.n = basis.n_modes

    def check_cfl(self):
        c = self.config
        k_max = math.sqrt(float(np.max(self.basis.k2)))
        stiff = c.dt * float(np.max(self.lam))
        if stiff > c.stiff_constant:
            raise CFLError(f"dt nu |xi_max|^(2 alpha) = {stiff:.3g} exceeds {c.stiff_constant}")
        adv = c.dt * k_max * max(self.u.sup_norm_bound(), self.b.sup_norm_bound())
        if adv > c.transport_constant:
            raise CFLError(f"dt |xi_max| sup|u, B| = {adv:.3g} exceeds {c.transport_constant}")
        return {"stiff": stiff, "transport": adv}

    def cubes(self, t):
        return self.u.mollified_at(t, self.width_u), self.b.mollified_at(t, self.width_b)

    def generator(self, t):
        cu, cb = self.cubes(t)
        Au, Ab = self.tab.matrix(cu), self.tab.matrix(cb)
        K = np.block([[-Au, Ab], [Ab, -Au]])
        F = np.zeros(2 * self.n)
        if self.ztab is not None:
            z1 = self.z[0].coef_at(t)
            z2 = self.z[1].coef_at(t)
            Zu, Zb = self.ztab.matrix(cu), self.ztab.matrix(cb)
            F[: self.n] = -(Zu @ z1 - Zb @ z2)
            F[self.n:] = -(Zu @ z2 - Zb @ z1)
        return K, F


def _initial_coefficients(f0, basis: GalerkinBasis):
    """Coefficients of P_n f0 and the full L^2 norm squared of f0."""
    if f0 is None:
        return np.zeros(basis.n_modes), 0.0
    f0 = np.asarray(f0, dtype=float)
    if f0.ndim == 1:
        if len(f0) != basis.n_modes:
            raise ValueError("coefficient vector length differs from n_modes")
        return f0.copy(), float(np.sum(f0**2))
    T = torus(f0.shape[-1])
    F = T.fft(f0)
    div = T.div_s(F)
    scale = max(float(np.max(np.abs(T.kabs * F))), 1e-300)
    if np.max(np.abs(div)) > 1e-10 * scale:
        raise ValueError("initial data must be divergence free")
    c = project_pn(f0, basis.n_modes, basis)
    return c, _VOL * float(np.mean(np.sum(f0**2, axis=0)))


def solve_linearized(config: GalerkinConfig, noise: NoiseState | None = None, v0=None, h0=None,
                     basis: GalerkinBasis | None = None) -> LinearizedState:
    """March the Galerkin system; returns coefficients at every step and the energy ledger."""
    basis = GalerkinBasis(config.n_modes) if basis is None else basis
    sysm = _System(config, basis, noise)
    cfl = sysm.check_cfl()
    n, N = basis.n_modes, config.n_steps
    dt = config.T / N
    cv, nv = _initial_coefficients(v0, basis)
    ch, nh = _initial_coefficients(h0, basis)
    X = np.concatenate([cv, ch])
    lam2 = np.concatenate([sysm.lam, sysm.lam])
    half = np.exp(-0.5 * dt * lam2)
    loss = -np.expm1(-dt * lam2)        # 1 - e^{-2 lam dt/2}
    out = np.zeros((N + 1, 2 * n))
    out[0] = X
    diss = np.zeros((N + 1, 2))
    work = np.zeros((N + 1, 2))
    skew = np.zeros(N + 1)
    eye = np.eye(2 * n)
    for k in range(N):
        t = k * dt
        d = 0.5 * X**2 * loss
        X = half * X
        K, F = sysm.generator(t + 0.5 * dt)
        rhs = X + 0.5 * dt * (K @ X) + dt * F
        Xn = sla.solve(eye - 0.5 * dt * K, rhs)
        Xm = 0.5 * (X + Xn)
        wv = dt * float(F[:n] @ Xm[:n])
        wh = dt * float(F[n:] @ Xm[n:])
        skew[k + 1] = skew[k] + dt * float(Xm @ (K @ Xm))
        X = Xn
        d2 = 0.5 * X**2 * loss
        X = half * X
        diss[k + 1] = diss[k] + [d[:n].sum() + d2[:n].sum(), d[n:].sum() + d2[n:].sum()]
        work[k + 1] = work[k] + [wv, wh]
        out[k + 1] = X
    times = np.linspace(0.0, N * dt, N + 1)
    ledger = {"dissipation": diss, "work": work, "skew": skew, "initial_full": (0.5 * nv, 0.5 * nh),
              "cfl": cfl, "dt": dt, "widths": (sysm.width_u, sysm.width_b)}
    return LinearizedState(config, basis, times, out[:, :n], out[:, n:], ledger, noise)


# checks ------------------------------------------------------------------------------

def energy_check(state: LinearizedState, tol=1e-8):
    """Discrete form of the energy inequality at every step.

    LHS(t) = 1/2|v~_n(t)|^2 + 1/2|H~_n(t)|^2 + nu int |(v~_n, H~_n)|^2_{H^alpha}
    RHS(t) = 1/2|v~(0)|^2 + 1/2|H~(0)|^2 + |I_v(t)| + |I_H(t)|,
    I_v = int <(u_n.grad) z1 - (B_n.grad) z2, v~_n>, I_H likewise.
    """
    ev, eh = state.energy()
    L = state.ledger
    lhs = ev + eh + L["dissipation"].sum(axis=1)
    iv, ih = -L["work"][:, 0], -L["work"][:, 1]
    rhs = sum(L["initial_full"]) + np.abs(iv) + np.abs(ih)
    scale = max(float(np.max(np.abs(rhs))), float(np.max(np.abs(lhs))), 1e-300)
    margin = rhs - lhs
    worst = float(np.max(np.maximum(-margin, 0.0))) / scale
    balance = ev + eh + L["dissipation"].sum(axis=1) - (ev[0] + eh[0]) - L["work"].sum(axis=1)
    e = ev + eh
    increase = float(np.max(np.maximum(np.diff(e), 0.0))) / max(float(e.max()), 1e-300)
    return {
        "lhs": lhs, "rhs": rhs, "margin": margin,
        "worst_violation": worst, "passed": worst <= tol,
        "balance_defect": float(np.max(np.abs(balance))) / scale,
        "skew_defect": float(np.max(np.abs(L["skew"]))) / scale,
        "max_energy_increase": increase,
    }


def dissipation_quadrature(state: LinearizedState):
    """Trapezoid rule for nu int |X|^2_{H^alpha} on the stored steps, against the ledger."""
    lam = state.basis.eigenvalues(state.config.alpha, state.config.nu)
    rate = state.v**2 @ lam + state.h**2 @ lam
    quad = np.concatenate([[0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * np.diff(state.times))])
    ledger = state.ledger["dissipation"].sum(axis=1)
    return {"quadrature": quad, "ledger": ledger,
            "difference": float(np.max(np.abs(quad - ledger))) / max(float(ledger[-1]), 1e-300)}


def decay_closed_form(state: LinearizedState):
    """Relative deviation from exp(-t nu |xi|^{2 alpha}) of every coefficient."""
    lam = state.basis.eigenvalues(state.config.alpha, state.config.nu)
    f = np.exp(-np.outer(state.times, lam))
    ev = state.v - f * state.v[0]
    eh = state.h - f * state.h[0]
    scale = max(float(np.max(np.abs(state.v[0]))), float(np.max(np.abs(state.h[0]))), 1e-300)
    return max(float(np.max(np.abs(ev))), float(np.max(np.abs(eh)))) / scale


def bound_constant(state: LinearizedState, s_z=3.0):
    """Ratio of the left side of the uniform bound to its right side.

    sup|X|^2 + int |X|^2_{H^alpha} against |X(0)|^2 + |(u,B)|^2_{L^2_t L^2_x} |(z1,z2)|^2_{C_t H^3}.
    """
    ev, eh = state.energy()
    lam = state.basis.eigenvalues(state.config.alpha, state.config.nu) / state.config.nu
    rate = state.v**2 @ lam + state.h**2 @ lam
    diss = float(np.sum(0.5 * (rate[1:] + rate[:-1]) * np.diff(state.times)))
    lhs = 2 * float(np.max(ev + eh)) + diss
    sysm = _System(state.config, state.basis, state.noise)
    ub2 = 0.0
    ts = state.times
    vals = []
    for t in ts:
        cu, cb = sysm.cubes(t)
        vals.append(_VOL * float(np.sum(np.abs(cu) ** 2) + np.sum(np.abs(cb) ** 2)))
    vals = np.array(vals)
    ub2 = float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ts)))
    z2 = 0.0
    if state.noise is not None:
        for f in (state.noise.z1, state.noise.z2):
            if not len(f.xi):
                continue
            w = (1.0 + np.sum(f.xi.astype(float) ** 2, axis=1)) ** s_z
            en = 0.5 * _VOL * (f.coef**2 * np.abs(np.sum(f.E * np.conj(f.E), axis=1)).real) @ w
            z2 += float(np.max(en))
    rhs = 2 * sum(state.ledger["initial_full"]) + ub2 * z2
    return {"lhs": lhs, "rhs": rhs, "constant": lhs / rhs if rhs > 0 else math.inf}


def cancellation_checks(state_or_config, t=None, rng=None, n=None):
    """Algebraic cancellations evaluated on a grid, independently of the matrices.

    transport_u/transport_b: |<P_n((w.grad) f), f>| / (|w| |f|^2) for f = v~_n, H~_n
    and w = u_n, B_n; cross: |<P_n((B.grad) H), v> + <P_n((B.grad) v), H>| / (|B||v||H|).
    With a config instead of a state, random elements of H_n are used.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if isinstance(state_or_config, LinearizedState):
        st = state_or_config
        config, basis = st.config, st.basis
        i = len(st.times) - 1 if t is None else int(np.argmin(np.abs(st.times - t)))
        t = st.times[i]
        cv, ch = st.v[i], st.h[i]
        noise = st.noise
    else:
        config = state_or_config
        basis = GalerkinBasis(config.n_modes)
        t = 0.5 * config.T if t is None else t
        cv, ch = rng.standard_normal(basis.n_modes), rng.standard_normal(basis.n_modes)
        noise = None
    sysm = _System(config, basis, noise)
    cu, cb = sysm.cubes(t)
    n = n or _even(sysm.R + 2 * basis.kinf + 2)
    T = torus(n)
    U, B = sysm.u.physical(cu, n), sysm.b.physical(cb, n)
    V, H = basis.reconstruct(cv, n), basis.reconstruct(ch, n)

    def adv(w, f):
        G = T.grad_s(T.fft(f))                      # (3 d, 3 comp, ...)
        g = T.ifft(G)
        return np.einsum("d...,dc...->c...", w, g)

    def ip(a, b):
        return _VOL * float(np.mean(np.sum(a * b, axis=0)))

    def nrm(a):
        return math.sqrt(max(ip(a, a), 1e-300))

    # <P_n g, f> = <g, f> for f in H_n
    out = {"t": float(t), "grid": n}
    out["transport_u"] = abs(ip(adv(U, V), V)) / (nrm(U) * nrm(V) ** 2) if nrm(U) > 1e-150 else 0.0
    out["transport_b"] = abs(ip(adv(U, H), H)) / (nrm(U) * nrm(H) ** 2) if nrm(U) > 1e-150 else 0.0
    if nrm(B) > 1e-150:
        out["cross"] = abs(ip(adv(B, H), V) + ip(adv(B, V), H)) / (nrm(B) * nrm(V) * nrm(H))
    else:
        out["cross"] = 0.0
    Au, Ab = sysm.tab.matrix(cu), sysm.tab.matrix(cb)
    out["matrix_skew"] = max(float(np.max(np.abs(Au + Au.T))), float(np.max(np.abs(Ab + Ab.T)))) / max(
        float(np.max(np.abs(Au))), float(np.max(np.abs(Ab))), 1e-300)
    return out


def _even(m):
    """Round up to a multiple of 4 (the padded grid must stay even)."""
    return max(4, -(-int(m) // 4) * 4)


def projected_transport_grid(config: GalerkinConfig, t, coef, which="u", n=None):
    """P_n((w.grad) f) coefficients by grid quadrature, an independent oracle for the matrices."""
    basis = GalerkinBasis(config.n_modes)
    sysm = _System(config, basis, None)
    cu, cb = sysm.cubes(t)
    c = cu if which == "u" else cb
    n = n or _even(sysm.R + 2 * basis.kinf + 2)
    T = torus(n)
    W = sysm.u.physical(c, n)
    f = basis.reconstruct(coef, n)
    g = np.einsum("d...,dc...->c...", W, T.ifft(T.grad_s(T.fft(f))))
    return project_pn(g, basis.n_modes, basis), sysm.tab.matrix(c) @ np.asarray(coef)


def uniqueness_check(config: GalerkinConfig, noise=None, v0=None, h0=None, etas=(1e-3, 1e-6), seed=0):
    """Repeat-solve, reordered-basis, zero-data and perturbation-stability checks."""
    basis = GalerkinBasis(config.n_modes)
    a = solve_linearized(config, noise, v0, h0, basis)
    b = solve_linearized(config, noise, v0, h0, basis)
    repeat = max(float(np.max(np.abs(a.v - b.v))), float(np.max(np.abs(a.h - b.h))))
    perm = np.random.default_rng(seed).permutation(basis.n_modes)
    pb = basis.permuted(perm)
    cv, _ = _initial_coefficients(v0, basis)
    ch, _ = _initial_coefficients(h0, basis)
    c = solve_linearized(config, noise, cv[perm], ch[perm], pb)
    inv = np.argsort(perm)
    scale = max(float(np.max(np.sqrt(np.sum(a.v**2 + a.h**2, axis=1)))), 1e-300)
    reorder = float(np.max(np.sqrt(np.sum((c.v[:, inv] - a.v) ** 2 + (c.h[:, inv] - a.h) ** 2, axis=1)))) / scale
    z = solve_linearized(config, None, None, None, basis)
    zero = float(np.max(np.abs(np.concatenate([z.v, z.h], axis=1))))
    rng = np.random.default_rng(seed + 1)
    dv, dh = rng.standard_normal(basis.n_modes), rng.standard_normal(basis.n_modes)
    nd = math.sqrt(float(dv @ dv + dh @ dh))
    growth = {}
    for eta in etas:
        p = solve_linearized(config, noise, cv + eta * dv / nd, ch + eta * dh / nd, basis)
        diff = np.sqrt(np.sum((p.v - a.v) ** 2 + (p.h - a.h) ** 2, axis=1))
        growth[eta] = float(np.max(diff)) / eta
    return {"repeat": repeat, "reordered": reorder, "zero_data": zero, "stability": growth}


def consistency_check(config: GalerkinConfig, noise=None, v0=None, h0=None):
    """Difference on shared modes between the n- and 2n-mode solutions."""
    a = solve_linearized(config, noise, v0, h0)
    big = GalerkinConfig(**{**config.__dict__, "n_modes": 2 * config.n_modes})
    b = solve_linearized(big, noise, v0, h0)
    n = config.n_modes
    d = np.sqrt(np.sum((b.v[:, :n] - a.v) ** 2 + (b.h[:, :n] - a.h) ** 2, axis=1))
    s = max(float(np.max(np.sqrt(np.sum(a.v**2 + a.h**2, axis=1)))), 1e-300)
    return float(np.max(d)) / s
