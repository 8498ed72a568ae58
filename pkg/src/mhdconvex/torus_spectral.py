"""Periodic spectral field algebra on the torus [-pi, pi]^3.

Fields are bare numpy arrays whose last three axes are the grid; leading
axes index components (``(3, n, n, n)`` for vectors, ``(3, 3, n, n, n)`` for
tensors).  Spectral arrays are ``rfftn`` coefficients with ``norm="forward"``
so that the zero coefficient is the spatial mean and coefficients do not
depend on the resolution.

Every differential operator acts on the resolved modes ``|xi_i| < n/2``;
Nyquist modes are annihilated.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import warnings

import numpy as np
import scipy.fft as sfft
from scipy.integrate import quad

_AX = (-3, -2, -1)


@dataclass(frozen=True)
class GridSpec:
    n_per_axis: int
    dealias_factor: Fraction = Fraction(3, 2)

    def __post_init__(self):
        n = self.n_per_axis
        if n < 4 or n % 2:
            raise ValueError(f"n_per_axis must be even and >= 4, got {n}")
        f = Fraction(self.dealias_factor)
        object.__setattr__(self, "dealias_factor", f)
        if f < Fraction(3, 2):
            raise ValueError("dealias_factor must be >= 3/2 for quadratic products")
        m = f * n
        if m.denominator != 1 or m.numerator % 2:
            raise ValueError(f"padded size {m} must be an even integer")

    @property
    def padded(self) -> int:
        return int(self.dealias_factor * self.n_per_axis)

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.n_per_axis


def _wavenumbers(n: int):
    k = sfft.fftfreq(n, 1.0 / n)
    kr = sfft.rfftfreq(n, 1.0 / n)
    return k, kr


class Torus:
    """Wavenumber tables and spectral operators for one resolution."""

    def __init__(self, n: int, dealias=Fraction(3, 2)):
        self.grid = GridSpec(n, Fraction(dealias))
        self.n = n
        self.shape = (n, n, n)
        self.spec_shape = (n, n, n // 2 + 1)
        k, kr = _wavenumbers(n)
        kx = k[:, None, None]
        ky = k[None, :, None]
        kz = kr[None, None, :]
        half = n // 2
        mask = (np.abs(kx) < half) & (np.abs(ky) < half) & (np.abs(kz) < half)
        self.mask = mask
        self.kvec = np.stack(np.broadcast_arrays(kx, ky, kz)).astype(float)
        # derivative multipliers with Nyquist removed
        self.ik = 1j * self.kvec * mask
        self.k2 = np.sum(self.kvec**2, axis=0)
        self.kabs = np.sqrt(self.k2)
        inv = np.zeros_like(self.k2)
        nz = (self.k2 > 0) & mask
        inv[nz] = 1.0 / self.k2[nz]
        self.inv_k2 = inv
        self._moll_cache: dict = {}

    # transforms -------------------------------------------------------
    def fft(self, f):
        return sfft.rfftn(f, axes=_AX, norm="forward")

    def ifft(self, F):
        return sfft.irfftn(F, s=self.shape, axes=_AX, norm="forward")

    def coords(self):
        x = -np.pi + self.grid.spacing * np.arange(self.n)
        return np.meshgrid(x, x, x, indexing="ij")

    # spectral operators ----------------------------------------------
    def resolve(self, F):
        return F * self.mask

    def grad_s(self, F):
        """Gradient; a leading axis of length 3 is prepended."""
        ik = self.ik.reshape((3,) + (1,) * (F.ndim - 3) + self.spec_shape)
        return ik * F[None]

    def div_s(self, V):
        return np.einsum("i...,i...->...", self.ik, V)

    def curl_s(self, V):
        ik = self.ik
        return np.stack([
            ik[1] * V[2] - ik[2] * V[1],
            ik[2] * V[0] - ik[0] * V[2],
            ik[0] * V[1] - ik[1] * V[0],
        ])

    def frac_lap_s(self, F, alpha):
        mult = np.where(self.k2 > 0, self.k2 ** float(alpha), 0.0) * self.mask
        return F * mult

    def inv_lap_s(self, F):
        """Delta^{-1} on mean-free modes."""
        return -F * self.inv_k2

    def leray_s(self, V):
        kdotv = np.einsum("i...,i...->...", self.kvec, V)
        out = V - self.kvec * (kdotv * self.inv_k2)
        out[:, 0, 0, 0] = V[:, 0, 0, 0]
        return out * self.mask

    def tensor_div_s(self, A):
        return np.einsum("j...,ij...->i...", self.ik, A)

    def inv_div_u_s(self, V):
        """Symmetric trace-free inverse divergence."""
        ik, il2 = self.ik, self.inv_k2
        P = -V * il2                      # Delta^{-1} v
        dP = ik[:, None] * P[None, :]     # d_k Delta^{-1} v^l
        divP = np.einsum("i...,i...->...", ik, P)
        dd = ik[:, None] * ik[None, :] * (-il2)   # d_k d_l Delta^{-1}
        eye = np.eye(3)[:, :, None, None, None]
        out = dP + np.swapaxes(dP, 0, 1) - 0.5 * (eye + dd) * divP
        out[..., 0, 0, 0] = 0.0
        return out

    def inv_div_b_s(self, V):
        """Skew inverse divergence eps_ijk (-Delta)^{-1} (curl f)_k."""
        C = self.curl_s(V) * self.inv_k2
        z = np.zeros_like(C[0])
        return np.stack([
            np.stack([z, C[2], -C[1]]),
            np.stack([-C[2], z, C[0]]),
            np.stack([C[1], -C[0], z]),
        ])

    # dealiased products ----------------------------------------------
    def pad(self, F):
        n, m = self.n, self.grid.padded
        h = n // 2
        out = np.zeros(F.shape[:-3] + (m, m, m // 2 + 1), dtype=complex)
        lo, hi_src, hi_dst = slice(0, h), slice(h + 1, n), slice(m - h + 1, m)
        for sx, dx in ((lo, lo), (hi_src, hi_dst)):
            for sy, dy in ((lo, lo), (hi_src, hi_dst)):
                out[..., dx, dy, :h] = F[..., sx, sy, :h]
        return out

    def truncate(self, G):
        n, m = self.n, self.grid.padded
        h = n // 2
        out = np.zeros(G.shape[:-3] + self.spec_shape, dtype=complex)
        lo, hi_dst, hi_src = slice(0, h), slice(h + 1, n), slice(m - h + 1, m)
        for dx, sx in ((lo, lo), (hi_dst, hi_src)):
            for dy, sy in ((lo, lo), (hi_dst, hi_src)):
                out[..., dx, dy, :h] = G[..., sx, sy, :h]
        return out

    def to_padded(self, F):
        """Physical values on the padded grid of a spectral array."""
        m = self.grid.padded
        return sfft.irfftn(self.pad(F), s=(m, m, m), axes=_AX, norm="forward")

    def from_padded(self, g):
        return self.truncate(sfft.rfftn(g, axes=_AX, norm="forward"))

    def product_s(self, F, G):
        """Dealiased pointwise product of two spectral scalar arrays."""
        return self.from_padded(self.to_padded(F) * self.to_padded(G))

    def outer_s(self, U, V, kind="general"):
        """Dealiased U (x) V for spectral vectors; kind in general/sym/skew."""
        u, v = self.to_padded(U), self.to_padded(V)
        T = u[:, None] * v[None, :]
        if kind == "sym":
            T = _traceless_sym(T)
        elif kind == "skew":
            T = 0.5 * (T - np.swapaxes(T, 0, 1))
        return self.from_padded(T)

    # mollifier ---------------------------------------------------------
    def space_mollifier(self, ell: float):
        if ell < self.grid.spacing:
            raise ValueError(f"spatial mollifier width {ell} below grid spacing {self.grid.spacing}")
        key = float(ell)
        if key not in self._moll_cache:
            kk = np.unique(self.k2)
            vals = radial_bump_symbol(ell * np.sqrt(kk))
            idx = np.searchsorted(kk, self.k2)
            self._moll_cache[key] = vals[idx]
        return self._moll_cache[key]

    def mollify_space_s(self, F, ell):
        return F * self.space_mollifier(ell)

    # norms ----------------------------------------------------------
    def lp_norm(self, f, p, normalized=False):
        f = np.asarray(f)
        mag = np.sqrt(np.sum(f**2, axis=tuple(range(f.ndim - 3)))) if f.ndim > 3 else np.abs(f)
        if p == np.inf:
            return float(mag.max())
        vol = 1.0 if normalized else (2 * np.pi) ** 3
        return float((vol * np.mean(mag**p)) ** (1.0 / p))

    def sobolev_norm(self, f, s, p):
        F = self.fft(f)
        mult = (1.0 + self.k2) ** (0.5 * s)
        return self.lp_norm(self.ifft(F * mult), p)


def _traceless_sym(T):
    S = 0.5 * (T + np.swapaxes(T, 0, 1))
    tr = np.einsum("ii...->...", S) / 3.0
    for i in range(3):
        S[i, i] -= tr
    return S


@lru_cache(maxsize=None)
def torus(n: int) -> Torus:
    return Torus(n)


def _torus_for(f) -> Torus:
    return torus(np.shape(f)[-1])


# mollifier kernels ---------------------------------------------------------

def _quad(fn, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return quad(fn, a, b, epsabs=1e-15, epsrel=1e-13, limit=200)[0]


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(300)
_GL_R = 0.5 * (_GL_X + 1.0)
_GL_WR = 0.5 * _GL_W * 4 * np.pi * _GL_R**2 * _bump(_GL_R)
_GL_WR = _GL_WR / _GL_WR.sum()


def radial_bump_symbol(kappa):
    """Fourier transform of the unit-mass radial bump at |xi| = kappa."""
    kappa = np.asarray(kappa, dtype=float)
    arg = np.multiply.outer(kappa, _GL_R)
    return np.sinc(arg / np.pi) @ _GL_WR


class TimeKernel:
    """Causal bump theta on [0,1], rescaled to width ell.

    ``cell_moments`` integrates polynomials in the local cell coordinate
    against the kernel, which makes mollification of piecewise polynomial
    time series exact up to quadrature tolerance.
    """

    _Z = _quad(lambda u: np.exp(-1.0 / (4 * u * (1 - u))), 0, 1)

    def __init__(self, ell: float):
        if ell <= 0:
            raise ValueError("ell must be positive")
        self.ell = float(ell)

    @classmethod
    def theta(cls, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        m = (u > 0) & (u < 1)
        out[m] = np.exp(-1.0 / (4 * u[m] * (1 - u[m]))) / cls._Z
        return out

    @classmethod
    def dtheta(cls, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        m = (u > 0) & (u < 1)
        um = u[m]
        out[m] = cls.theta(um) * (1 - 2 * um) / (4 * um**2 * (1 - um) ** 2)
        return out

    def cell_moments(self, t, t0, t1, degree, deriv=False):
        """int_{t0}^{t1} ((s-t0)/(t1-t0))^j k(t-s) ds for j = 0..degree.

        k is theta_ell, or its time derivative when ``deriv``.  Composite
        Gauss-Legendre in the kernel variable; agrees with adaptive
        quadrature to ~1e-15 and is smooth in t.
        """
        ell, dt = self.ell, t1 - t0
        A, B = (t - t0) / dt, ell / dt
        lo = max((t - t1) / ell, 0.0)
        hi = min((t - t0) / ell, 1.0)
        out = np.zeros(degree + 1)
        if hi <= lo:
            return out
        e = np.linspace(lo, hi, _GLT_PANELS + 1)
        half = 0.5 * (e[1:] - e[:-1])[:, None]
        u = (half * (_GLT_X[None] + 1.0) + e[:-1, None]).ravel()
        w = (half * _GLT_W[None]).ravel()
        k = self.dtheta(u) / ell if deriv else self.theta(u)
        wk = w * k
        p = A - B * u
        acc = np.ones_like(u)
        for j in range(degree + 1):
            out[j] = np.dot(wk, acc)
            acc = acc * p
        return out


_GLT_X, _GLT_W = np.polynomial.legendre.leggauss(64)
_GLT_PANELS = 4


@dataclass
class TimeSeriesField:
    times: np.ndarray
    frames: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if len(self.frames) != len(self.times):
            raise ValueError("one frame per time sample is required")

    def at(self, t):
        """Piecewise-linear value at t (zero outside [t_0, t_end])."""
        ts = self.times
        if t < ts[0] or t > ts[-1]:
            return np.zeros_like(self.frames[0])
        i = min(np.searchsorted(ts, t, side="right") - 1, len(ts) - 2)
        th = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - th) * self.frames[i] + th * self.frames[i + 1]


def embed_spectral(F, n_to: int):
    """Zero-pad (or truncate) an rfft array to resolution n_to.

    Nyquist entries are dropped, as every operator here annihilates them.
    """
    n = F.shape[-3]
    if n == n_to:
        return F * torus(n).mask
    a = min(n, n_to) // 2
    out = np.zeros(F.shape[:-3] + (n_to, n_to, n_to // 2 + 1), dtype=complex)
    idx_src = np.r_[0:a, n - a + 1:n]
    idx_dst = np.r_[0:a, n_to - a + 1:n_to]
    out[..., idx_dst[:, None], idx_dst[None, :], :a] = F[..., idx_src[:, None], idx_src[None, :], :a]
    return out


class ModalField:
    """Finite sum of real Fourier modes with piecewise-linear coefficients.

    f(x, t) = sum_k c_k(t) Re(E_k exp(i xi_k . x)), with integer xi_k,
    complex polarisations E_k (shape (K, 3)) and coefficients sampled on
    ``times`` (shape (Nt, K)).  Zero outside [times[0], times[-1]].
    """

    def __init__(self, xi, E, times, coef):
        self.xi = np.asarray(xi, dtype=np.int64).reshape(-1, 3)
        self.E = np.asarray(E, dtype=complex).reshape(-1, 3)
        self.times = np.asarray(times, dtype=float)
        self.coef = np.asarray(coef, dtype=float).reshape(len(self.times), len(self.xi))
        if len(self.E) != len(self.xi):
            raise ValueError("one polarisation per wave vector is required")
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if len(self.xi) and np.any(np.all(self.xi == 0, axis=1)):
            raise ValueError("modal fields are mean-free; xi = 0 is not allowed")
        self._scatter_cache: dict = {}

    @classmethod
    def zero(cls, times):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), times, np.zeros((len(times), 0)))

    @property
    def bandwidth(self) -> int:
        return int(np.max(np.abs(self.xi))) if len(self.xi) else 0

    def divergence_error(self):
        if not len(self.xi):
            return 0.0
        return float(np.max(np.abs(np.einsum("ki,ki->k", self.xi, self.E))))

    def cell_index(self, t):
        ts = self.times
        return int(min(max(np.searchsorted(ts, t, side="right") - 1, 0), len(ts) - 2))

    def coef_at(self, t):
        ts = self.times
        if t < ts[0] or t > ts[-1]:
            return np.zeros(len(self.xi))
        i = self.cell_index(t)
        th = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - th) * self.coef[i] + th * self.coef[i + 1]

    def slope_at(self, t):
        ts = self.times
        if t < ts[0] or t > ts[-1]:
            return np.zeros(len(self.xi))
        i = self.cell_index(t)
        return (self.coef[i + 1] - self.coef[i]) / (ts[i + 1] - ts[i])

    def _scatter_table(self, n):
        if n not in self._scatter_cache:
            if len(self.xi) and self.bandwidth >= n // 2:
                raise ValueError(f"modal field of bandwidth {self.bandwidth} not resolved on n={n}")
            sign = (-1.0) ** self.xi.sum(axis=1)
            pos, neg = [], []
            for k, (xi, s) in enumerate(zip(self.xi, sign)):
                if xi[2] > 0 or xi[2] == 0:
                    pos.append((k, xi[0] % n, xi[1] % n, xi[2], s))
                if xi[2] < 0 or xi[2] == 0:
                    neg.append((k, -xi[0] % n, -xi[1] % n, -xi[2], s))
            self._scatter_cache[n] = (np.array(pos, dtype=float).reshape(-1, 5),
                                      np.array(neg, dtype=float).reshape(-1, 5))
        return self._scatter_cache[n]

    def spectral(self, n, c):
        """rfft coefficients (shape (3, n, n, n//2+1)) for coefficient vector c."""
        out = np.zeros((3, n, n, n // 2 + 1), dtype=complex)
        pos, neg = self._scatter_table(n)
        for tab, conj in ((pos, False), (neg, True)):
            if not len(tab):
                continue
            k = tab[:, 0].astype(int)
            ix, iy, iz = (tab[:, j].astype(int) for j in (1, 2, 3))
            E = np.conj(self.E[k]) if conj else self.E[k]
            vals = 0.5 * (c[k] * tab[:, 4])[:, None] * E
            for comp in range(3):
                np.add.at(out[comp], (ix, iy, iz), vals[:, comp])
        return out

    def at(self, n, t):
        return self.spectral(n, self.coef_at(t))

    def restricted(self, t_max):
        """Copy with coefficients after t_max replaced by their value at t_max."""
        coef = self.coef.copy()
        later = self.times > t_max
        coef[later] = self.coef_at(t_max)
        return ModalField(self.xi, self.E, self.times, coef)


def mollify_time_linear(series: TimeSeriesField, ell: float, t: float, deriv=False):
    """Causal mollification of a piecewise-linear series, exact in time."""
    ts = series.times
    if ell < np.max(np.diff(ts)) - 1e-14:
        raise ValueError("temporal mollifier width below time spacing")
    ker = TimeKernel(ell)
    out = np.zeros_like(series.frames[0])
    i0 = max(np.searchsorted(ts, t - ell, side="right") - 1, 0)
    for i in range(i0, len(ts) - 1):
        if ts[i] >= t:
            break
        w = ker.cell_moments(t, ts[i], ts[i + 1], 1, deriv)
        f0, f1 = series.frames[i], series.frames[i + 1]
        out = out + (w[0] - w[1]) * f0 + w[1] * f1
    return out


# public operators on physical arrays ------------------------------------------

def fft(f):
    return _torus_for(f).fft(f)


def ifft(F, n):
    return torus(n).ifft(F)


def frac_laplacian(f, alpha):
    t = _torus_for(f)
    return t.ifft(t.frac_lap_s(t.fft(f), alpha))


def leray_project(f):
    t = _torus_for(f)
    return t.ifft(t.leray_s(t.fft(f)))


def gradient(f):
    t = _torus_for(f)
    return t.ifft(t.grad_s(t.fft(f)))


def divergence(f):
    t = _torus_for(f)
    return t.ifft(t.div_s(t.fft(f)))


def curl(f):
    t = _torus_for(f)
    return t.ifft(t.curl_s(t.fft(f)))


def tensor_divergence(A):
    t = _torus_for(A)
    return t.ifft(t.tensor_div_s(t.fft(A)))


def _mean_tol(f):
    return 1e-12 * max(1.0, float(np.max(np.abs(f))))


def inv_div_u(v):
    t = _torus_for(v)
    V = t.fft(v)
    if np.max(np.abs(V[:, 0, 0, 0])) > _mean_tol(v):
        raise ValueError("inv_div_u requires a mean-free field")
    return t.ifft(t.inv_div_u_s(V))


def inv_div_b(f, tol=1e-9):
    t = _torus_for(f)
    F = t.fft(f)
    if np.max(np.abs(F[:, 0, 0, 0])) > _mean_tol(f):
        raise ValueError("inv_div_B requires a mean-free field")
    dnorm = np.sqrt(np.sum(np.abs(t.div_s(F)) ** 2))
    fnorm = np.sqrt(np.sum(np.abs(t.kabs * F) ** 2))
    if dnorm > tol * max(fnorm, 1e-300):
        raise ValueError(f"inv_div_B requires a divergence-free field (relative div {dnorm / fnorm:.2e})")
    return t.ifft(t.inv_div_b_s(F))


def mollify_space(f, ell):
    t = _torus_for(f)
    return t.ifft(t.mollify_space_s(t.fft(f), ell))


def mollify_time(series: TimeSeriesField, ell: float) -> TimeSeriesField:
    frames = np.stack([mollify_time_linear(series, ell, t) for t in series.times])
    return TimeSeriesField(series.times.copy(), frames)


def lp_norm(f, p, normalized=False):
    return _torus_for(f).lp_norm(f, p, normalized)


def sobolev_norm(f, s, p):
    return _torus_for(f).sobolev_norm(f, s, p)


# appendix inequality checks --------------------------------------------------

def _norm_avg(x, p):
    if p == np.inf:
        return float(np.max(np.abs(x)))
    return float(np.mean(np.abs(x) ** p) ** (1.0 / p))


def decorrelation_check(f, g, theta: int, p):
    """|‖f g(θ·)‖_p − ‖f‖_p ‖g‖_p| and θ^{-1/p} ‖f‖_{C¹} ‖g‖_p.

    ``f`` is sampled on a uniform periodic grid of any dimension, ``g`` is a
    1D periodic sample array of the same length n, applied along axis 0.
    Norms use the normalized (probability) measure, for which the left side
    vanishes as θ grows.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n = f.shape[0]
    if g.shape != (n,):
        raise ValueError("g must be sampled on the same 1D grid as f")
    if int(theta) != theta or theta < 1:
        raise ValueError("theta must be a positive integer")
    theta = int(theta)
    G = np.fft.rfft(g)
    sig = np.nonzero(np.abs(G) > 1e-13 * np.abs(G).max())[0] if np.any(G) else np.array([0])
    if theta * sig.max() >= n // 2:
        raise ValueError("g(theta x) is not resolved on the grid (aliasing)")
    gt = g[(theta * np.arange(n)) % n]
    shape = (n,) + (1,) * (f.ndim - 1)
    # ||g(theta .)||_p equals ||g||_p for integer theta; evaluating it on the
    # same samples keeps the quadrature error of |g|^p out of lhs
    lhs = abs(_norm_avg(f * gt.reshape(shape), p) - _norm_avg(f, p) * _norm_avg(gt, p))
    c1 = float(np.max(np.abs(f)))
    F = np.fft.fftn(f)
    for ax in range(f.ndim):
        k = np.fft.fftfreq(n, 1.0 / n)
        kk = k.reshape([-1 if i == ax else 1 for i in range(f.ndim)])
        c1 = max(c1, float(np.max(np.abs(np.fft.ifftn(1j * kk * F).real))))
    bound = theta ** (-1.0 / p if p != np.inf else 0.0) * c1 * _norm_avg(g, p)
    return {"lhs_error": lhs, "bound": bound}


def commutator_check(a, f, k_cut: int, p):
    """‖|∇|^{-1} P≠0 (a P≥k f)‖_p against k^{-1} ‖∇²a‖_∞ ‖f‖_p."""
    if not 1 < p < np.inf:
        raise ValueError("commutator check needs 1 < p < inf")
    t = _torus_for(f)
    if k_cut >= t.n // 2:
        raise ValueError("k_cut beyond Nyquist")
    A, F = t.fft(a), t.fft(f)
    Fk = F * (t.kabs >= k_cut)
    prod = t.to_padded(A) * t.to_padded(Fk)
    m = t.grid.padded
    Pm = sfft.rfftn(prod, axes=_AX, norm="forward")
    km, kmr = _wavenumbers(m)
    kabs = np.sqrt(km[:, None, None] ** 2 + km[None, :, None] ** 2 + kmr[None, None, :] ** 2)
    with np.errstate(divide="ignore"):
        mult = np.where(kabs > 0, 1.0 / kabs, 0.0)
    lhs_field = sfft.irfftn(Pm * mult, s=(m, m, m), axes=_AX, norm="forward")
    lhs = float(((2 * np.pi) ** 3 * np.mean(np.abs(lhs_field) ** p)) ** (1 / p))
    hess = t.ik[:, None] * t.ik[None, :] * A
    d2 = float(np.max(np.abs(t.ifft(hess))))
    bound = d2 * t.lp_norm(f, p) / k_cut
    return {"lhs": lhs, "bound": bound, "ratio": lhs / bound if bound > 0 else np.inf}
