"""Cutoff chi, normalizers rho_B, rho_u, the matrix G^B and the amplitudes a_(k).

Both amplitude families share one affine structure:

    a_(k)^2 = rho * c_k - <L_k, M>,

with M = R^B_l for the magnetic set and M = R^u_l + G^B for the velocity set,
where (c_k, L_k) are the center value and dual matrix of the geometric
functional.  Time derivatives follow by the chain rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometricBasis, frame_matrices


def _f(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = x > 0
    out[m] = np.exp(-1.0 / x[m])
    return out


def _df(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = x > 0
    out[m] = np.exp(-1.0 / x[m]) / x[m] ** 2
    return out


def smooth_step(x):
    """C^infinity step, 0 for x <= 0 and 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    a, b = _f(x), _f(1.0 - x)
    return a / (a + b)


def smooth_step_d(x):
    x = np.asarray(x, dtype=float)
    a, b = _f(x), _f(1.0 - x)
    da, db = _df(x), -_df(1.0 - x)
    return (da * (a + b) - a * (da + db)) / (a + b) ** 2


def chi(z):
    """chi = 1 on [0,1], z on [2, inf), 1 + (z-1) step(z-1) in between."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("chi is defined for z >= 0")
    return 1.0 + (z - 1.0) * smooth_step(z - 1.0)


def chi_d(z):
    z = np.asarray(z, dtype=float)
    return smooth_step(z - 1.0) + (z - 1.0) * smooth_step_d(z - 1.0)


def theta_cutoff(t, varsigma):
    """Time cutoff: 0 for t <= varsigma/2, 1 for t >= varsigma."""
    return smooth_step((np.asarray(t, dtype=float) - varsigma / 2) / (varsigma / 2))


def theta_cutoff_d(t, varsigma):
    return smooth_step_d((np.asarray(t, dtype=float) - varsigma / 2) / (varsigma / 2)) / (varsigma / 2)


def frob(M):
    return np.sqrt(np.einsum("ij...,ij...->...", M, M))


def normalizer(M, delta, eps, Mdot=None):
    """rho = 2 delta chi(|M|/delta)/eps and, if Mdot is given, d rho/dt."""
    n = frob(M)
    rho = 2.0 * delta * chi(n / delta) / eps
    if Mdot is None:
        return rho, None
    with np.errstate(invalid="ignore", divide="ignore"):
        ndot = np.where(n > 0, np.einsum("ij...,ij...->...", M, Mdot) / np.where(n > 0, n, 1.0), 0.0)
    drho = 2.0 * chi_d(n / delta) * ndot / eps
    return rho, drho


def _pair(funcs, M, rho, Mdot=None, drho=None):
    sq, dsq = [], []
    for f in funcs:
        L = f.dual_array
        a2 = rho * float(f.center) - np.einsum("ij,ij...->...", L, M)
        sq.append(a2)
        if Mdot is not None:
            dsq.append(drho * float(f.center) - np.einsum("ij,ij...->...", L, Mdot))
    return sq, (dsq if Mdot is not None else None)


def _assert_sym(M, kind):
    scale = max(1.0, float(np.max(np.abs(M))))
    if kind == "skew":
        err = np.max(np.abs(M + np.swapaxes(M, 0, 1)))
    else:
        err = np.max(np.abs(M - np.swapaxes(M, 0, 1)))
    if err > 1e-10 * scale:
        raise ValueError(f"input stress is not {kind} (violation {err:.2e})")


@dataclass
class AmplitudeSet:
    rho_b: np.ndarray
    rho_u: np.ndarray
    g_b: np.ndarray
    a2_mag: list
    a2_vel: list
    da2_mag: list | None = None
    da2_vel: list | None = None

    @property
    def a2(self):
        """Squared amplitudes in frame order (velocity set first)."""
        return self.a2_vel + self.a2_mag

    @property
    def da2(self):
        if self.da2_vel is None:
            return None
        return self.da2_vel + self.da2_mag

    @property
    def a(self):
        return [np.sqrt(x) for x in self.a2]


def magnetic_amplitudes(R_b, delta, basis: GeometricBasis, R_b_dot=None, check=True):
    _assert_sym(R_b, "skew")
    rho, drho = normalizer(R_b, delta, basis.eps_b, R_b_dot)
    if check:
        ratio = np.max(frob(R_b) / rho)
        if ratio > basis.eps_b * (1 + 1e-12):
            raise ValueError("normalized magnetic stress left B_eps_B(0)")
    sq, dsq = _pair(basis.lambda_b, R_b, rho, R_b_dot, drho)
    if check and min(float(np.min(s)) for s in sq) <= 0:
        raise ValueError("non-positive magnetic amplitude")
    return rho, sq, dsq


def g_b_matrix(a2_mag, basis: GeometricBasis, da2_mag=None, mean_phi2=1.0):
    """G^B = sum a_(k)^2 fint(W W - D D) = sum a^2 <phi^2> (k1 k1 - k2 k2)."""
    G = 0.0
    dG = 0.0 if da2_mag is not None else None
    for i, f in enumerate(basis.lambda_b):
        _, k1, k2 = f.frame.arrays()
        M = (np.outer(k1, k1) - np.outer(k2, k2)) * mean_phi2
        M = M.reshape((3, 3) + (1,) * np.ndim(a2_mag[i]))
        G = G + M * a2_mag[i]
        if da2_mag is not None:
            dG = dG + M * da2_mag[i]
    return G, dG


def velocity_amplitudes(R_u, G, delta, basis: GeometricBasis, R_u_dot=None, G_dot=None, check=True):
    _assert_sym(R_u, "sym")
    M = R_u + G
    Mdot = None if R_u_dot is None else R_u_dot + (0.0 if G_dot is None else G_dot)
    rho, drho = normalizer(M, delta, basis.eps_u, Mdot)
    if check:
        ratio = np.max(frob(M) / rho)
        if ratio > basis.eps_u * (1 + 1e-12):
            raise ValueError("normalized velocity stress left B_eps_u(Id)")
    sq, dsq = _pair(basis.lambda_u, M, rho, Mdot, drho)
    if check and min(float(np.min(s)) for s in sq) <= 0:
        raise ValueError("non-positive velocity amplitude")
    return rho, sq, dsq


def build_amplitudes(R_u, R_b, delta, basis, R_u_dot=None, R_b_dot=None) -> AmplitudeSet:
    rho_b, a2m, da2m = magnetic_amplitudes(R_b, delta, basis, R_b_dot)
    G, dG = g_b_matrix(a2m, basis, da2m)
    rho_u, a2v, da2v = velocity_amplitudes(R_u, G, delta, basis, R_u_dot, dG)
    return AmplitudeSet(rho_b, rho_u, G, a2m, a2v, da2m, da2v)


# cancellation identities -----------------------------------------------------------

def _mean_and_osc(torus, f):
    F = torus.fft(f)
    mean = F[0, 0, 0].real
    F[0, 0, 0] = 0.0
    return mean, torus.ifft(F)


def identity_magnetic(torus, amps: AmplitudeSet, flows, blocks, R_b, t):
    """Both sides of the magnetic cancellation identity at time t."""
    nu = len(flows.basis.lambda_u)
    lhs = 0.0
    rhs = -R_b
    for j, f in enumerate(flows.basis.lambda_b):
        idx = nu + j
        a = np.sqrt(amps.a2_mag[j])
        g2 = float(blocks.g(idx, t)) ** 2
        phi2 = flows.profile(idx) ** 2
        M = frame_matrices(f, True)[:, :, None, None, None]
        lhs = lhs + a * a * g2 * phi2 * M
        mean, osc = _mean_and_osc(torus, phi2)
        rhs = rhs + a * a * g2 * osc * M + a * a * (g2 - 1.0) * mean * M
    return lhs, rhs


def identity_velocity(torus, amps: AmplitudeSet, flows, blocks, R_u, t):
    """Both sides of the velocity cancellation identity at time t.

    The time-average term uses fint W(x)W, the form the identity needs.
    """
    lhs = 0.0
    eye = np.eye(3)[:, :, None, None, None]
    rhs = amps.rho_u * eye - (R_u + amps.g_b)
    for j, f in enumerate(flows.basis.lambda_u):
        a = np.sqrt(amps.a2_vel[j])
        g2 = float(blocks.g(j, t)) ** 2
        phi2 = flows.profile(j) ** 2
        M = frame_matrices(f, False)[:, :, None, None, None]
        lhs = lhs + a * a * g2 * phi2 * M
        mean, osc = _mean_and_osc(torus, phi2)
        rhs = rhs + a * a * g2 * osc * M + a * a * (g2 - 1.0) * mean * M
    return lhs, rhs


def identity_residual(lhs, rhs, scale=0.0):
    """Max and relative mismatch; ``scale`` floors the denominator (use rho when no pulse is active)."""
    err = float(np.max(np.abs(lhs - rhs)))
    scale = float(max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), scale, 1e-300))
    return {"max_abs": err, "relative": err / scale}
