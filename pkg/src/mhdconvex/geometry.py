"""Rational wave-vector frames and the positive amplitude functionals.

All frames are signed permutations of the rows of the rational rotation
``[[1,2,2],[2,1,-2],[2,-2,1]]/3``, so every frame vector has denominator 3
and ``N_Lambda = 3``.

The velocity set uses six directions k1 whose rank-one matrices ``k1 k1^T``
form a basis of Sym(3) with the identity strictly inside their positive
cone.  The magnetic set uses three role-swapped pairs ``(k, k1, k2)``,
``(-k, k2, k1)``.  In both cases ``gamma_k^2`` is an affine functional
``c_k + <L_k, X - X_0>`` obtained from the exact dual basis.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

_ROT = ((1, 2, 2), (2, 1, -2), (2, -2, 1))
_DEN = 3

Vec = tuple  # tuple of three Fractions


@dataclass(frozen=True)
class WaveVectorFrame:
    k: Vec
    k1: Vec
    k2: Vec

    def __post_init__(self):
        vs = (self.k, self.k1, self.k2)
        for i in range(3):
            for j in range(3):
                d = sum(a * b for a, b in zip(vs[i], vs[j]))
                if d != (1 if i == j else 0):
                    raise ValueError(f"frame not orthonormal: {self}")

    def arrays(self):
        return tuple(np.array([float(c) for c in v]) for v in (self.k, self.k1, self.k2))

    def to_json(self):
        return {name: [[c.numerator, c.denominator] for c in v]
                for name, v in (("k", self.k), ("k1", self.k1), ("k2", self.k2))}


@dataclass(frozen=True)
class FrameFunctional:
    """gamma^2(X) = center + <dual, X - X_0> with exact rational data."""

    frame: WaveVectorFrame
    center: Fraction
    dual: tuple  # 3x3 tuple of Fractions

    @property
    def dual_array(self):
        return np.array([[float(c) for c in row] for row in self.dual])

    @property
    def dual_norm(self):
        return float(np.linalg.norm(self.dual_array))


@dataclass(frozen=True)
class GeometricBasis:
    lambda_u: tuple      # FrameFunctional for the velocity set
    lambda_b: tuple      # FrameFunctional for the magnetic set, pairs adjacent
    n_lambda: int
    eps_u: float
    eps_b: float
    info: dict = field(default_factory=dict, compare=False)

    @property
    def frames(self):
        return tuple(f.frame for f in self.lambda_u + self.lambda_b)

    def to_json(self):
        def fj(f):
            return {"frame": f.frame.to_json(),
                    "center": [f.center.numerator, f.center.denominator],
                    "dual": [[[c.numerator, c.denominator] for c in row] for row in f.dual]}
        return {"lambda_u": [fj(f) for f in self.lambda_u],
                "lambda_b": [fj(f) for f in self.lambda_b],
                "n_lambda": self.n_lambda, "eps_u": self.eps_u, "eps_b": self.eps_b,
                "m_star": estimate_m_star(self)}

    def dumps(self):
        return json.dumps(self.to_json(), indent=1)


def _frac_vec(v):
    return tuple(Fraction(c, _DEN) for c in v)


def enumerate_frames():
    """All orthonormal frames from signed permutations of the base rotation."""
    out = set()
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            rows = [tuple(s * _ROT[i][perm[j]] for j in range(3)) for i, s in enumerate(signs)]
            for order in itertools.permutations(range(3)):
                out.add(tuple(rows[o] for o in order))
    return [WaveVectorFrame(*(_frac_vec(r) for r in fr)) for fr in sorted(out)]


def _solve_exact(A, b):
    """Gaussian elimination over the rationals; A square list of lists."""
    n = len(A)
    M = [list(map(Fraction, row)) + [Fraction(x)] for row, x in zip(A, b)]
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c] != 0), None)
        if piv is None:
            raise np.linalg.LinAlgError("singular system")
        M[c], M[piv] = M[piv], M[c]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c] / M[c][c]
                M[r] = [x - f * y for x, y in zip(M[r], M[c])]
    return [M[i][n] / M[i][i] for i in range(n)]


def _inverse_exact(A):
    n = len(A)
    cols = [_solve_exact(A, [int(i == j) for i in range(n)]) for j in range(n)]
    return [[cols[j][i] for j in range(n)] for i in range(n)]


_SYM_IDX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _sym_coords(v):
    return [v[i] * v[j] for i, j in _SYM_IDX]


def _dual_from_row(row):
    """Matrix L with <L, S>_F equal to sum(row * sym-coordinates of S)."""
    L = [[Fraction(0)] * 3 for _ in range(3)]
    for c, (i, j) in zip(row, _SYM_IDX):
        if i == j:
            L[i][i] = c
        else:
            L[i][j] = L[j][i] = c / 2
    return tuple(tuple(r) for r in L)


def _velocity_set(frames):
    dirs = sorted({max(f.k1, tuple(-c for c in f.k1)) for f in frames})
    ident = [1, 1, 1, 0, 0, 0]
    best = None
    for comb in itertools.combinations(dirs, 6):
        A = np.array([[float(x) for x in _sym_coords(v)] for v in comb]).T
        if abs(np.linalg.det(A)) < 1e-9:
            continue
        c = np.linalg.solve(A, ident)
        if c.min() <= 0:
            continue
        rows = np.linalg.inv(A)
        radius = min(c[i] / _dual_frob(rows[i]) for i in range(6))
        if best is None or radius > best[0] + 1e-12:
            best = (radius, comb)
    if best is None:
        raise RuntimeError("no spanning velocity direction set with identity in the positive cone")
    comb = best[1]
    A = [[x for x in col] for col in zip(*[_sym_coords(v) for v in comb])]
    Ainv = _inverse_exact(A)
    centers = _solve_exact(A, [1, 1, 1, 0, 0, 0])
    used, out = set(), []
    for i, d in enumerate(comb):
        fr = next(f for f in frames if f.k1 in (d, tuple(-c for c in d)) and f.k not in used
                  and tuple(-c for c in f.k) not in used)
        used.add(fr.k)
        out.append(FrameFunctional(fr, centers[i], _dual_from_row(Ainv[i])))
    return out


def _dual_frob(row):
    row = np.asarray(row, dtype=float)
    return float(np.sqrt(np.sum(row[:3] ** 2) + 0.5 * np.sum(row[3:] ** 2)))


def _skew_coords(M):
    return [M[2][1], M[0][2], M[1][0]]


def _magnetic_set(frames, taken):
    center = Fraction(1)
    neg = lambda v: tuple(-c for c in v)
    chosen = []
    for f in frames:
        if f.k in taken or neg(f.k) in taken:
            continue
        if any(f.k in (g.k, neg(g.k)) for g in chosen):
            continue
        trial = np.array([[float(c) for c in g.k] for g in chosen + [f]])
        if np.linalg.matrix_rank(trial) < len(chosen) + 1:
            continue
        chosen.append(f)
        if len(chosen) == 3:
            break
    if len(chosen) < 3:
        raise RuntimeError("could not find three independent magnetic frames")
    mats = []
    for f in chosen:
        A = [[f.k2[i] * f.k1[j] - f.k1[i] * f.k2[j] for j in range(3)] for i in range(3)]
        mats.append(_skew_coords(A))
    M = [list(col) for col in zip(*mats)]
    Minv = _inverse_exact(M)
    out = []
    for p, f in enumerate(chosen):
        row = Minv[p]
        # <D, A>_F = row . axial(A) for skew A
        D = [[Fraction(0)] * 3 for _ in range(3)]
        D[2][1], D[1][2] = row[0] / 2, -row[0] / 2
        D[0][2], D[2][0] = row[1] / 2, -row[1] / 2
        D[1][0], D[0][1] = row[2] / 2, -row[2] / 2
        half = tuple(tuple(x / 2 for x in r) for r in D)
        mhalf = tuple(tuple(-x / 2 for x in r) for r in D)
        swapped = WaveVectorFrame(neg(f.k), f.k2, f.k1)
        out.append(FrameFunctional(f, center, half))
        out.append(FrameFunctional(swapped, center, mhalf))
    return out


def _radius(funcs):
    return min(float(f.center) / f.dual_norm for f in funcs)


@lru_cache(maxsize=1)
def build_geometric_basis() -> GeometricBasis:
    frames = enumerate_frames()
    vel = _velocity_set(frames)
    taken = {f.frame.k for f in vel}
    mag = _magnetic_set(frames, taken)
    dens = [c.denominator for f in vel + mag for v in (f.frame.k, f.frame.k1, f.frame.k2) for c in v]
    n_lambda = math.lcm(*dens)
    ru, rb = _radius(vel), _radius(mag)
    return GeometricBasis(tuple(vel), tuple(mag), n_lambda, 0.5 * ru, 0.5 * rb,
                          {"boundary_radius_u": ru, "boundary_radius_b": rb,
                           "n_frames_enumerated": len(frames)})


# functionals --------------------------------------------------------------------

def _frob(X):
    return np.sqrt(np.einsum("ij...,ij...->...", X, X))


def gamma_squared(funcs, X, X0=None):
    """Affine values center + <L, X - X0> for each functional (vectorized)."""
    D = X if X0 is None else X - X0.reshape((3, 3) + (1,) * (X.ndim - 2))
    return [float(f.center) + np.einsum("ij,ij...->...", f.dual_array, D) for f in funcs]


def gamma_sym(S, basis: GeometricBasis, slack=1e-12):
    S = np.asarray(S, dtype=float)
    if np.max(np.abs(S - np.swapaxes(S, 0, 1))) > 1e-12 * max(1.0, np.max(np.abs(S))):
        raise ValueError("gamma_sym needs a symmetric matrix")
    eye = np.eye(3)
    dist = _frob(S - eye.reshape((3, 3) + (1,) * (S.ndim - 2)))
    if np.max(dist) > basis.eps_u * (1 + slack):
        raise ValueError(f"S outside B_eps_u(Id): distance {np.max(dist):.4g} > {basis.eps_u:.4g}")
    g2 = gamma_squared(basis.lambda_u, S, eye)
    return {f.frame.k: np.sqrt(v) for f, v in zip(basis.lambda_u, g2)}


def gamma_skew(A, basis: GeometricBasis, slack=1e-12):
    A = np.asarray(A, dtype=float)
    if np.max(np.abs(A + np.swapaxes(A, 0, 1))) > 1e-12 * max(1.0, np.max(np.abs(A))):
        raise ValueError("gamma_skew needs a skew matrix")
    if np.max(_frob(A)) > basis.eps_b * (1 + slack):
        raise ValueError(f"A outside B_eps_B(0): norm {np.max(_frob(A)):.4g} > {basis.eps_b:.4g}")
    g2 = gamma_squared(basis.lambda_b, A)
    return {f.frame.k: np.sqrt(v) for f, v in zip(basis.lambda_b, g2)}


def _reconstruct(gam, funcs, magnetic):
    out = 0.0
    for f in funcs:
        g2 = np.asarray(gam[f.frame.k]) ** 2
        M = frame_matrices(f, magnetic)
        out = out + M.reshape((3, 3) + (1,) * g2.ndim) * g2
    return out


def reconstruct_sym(gam, basis):
    return _reconstruct(gam, basis.lambda_u, False)


def reconstruct_skew(gam, basis):
    return _reconstruct(gam, basis.lambda_b, True)


def _sqrt_derivative_bound(c, L, eps, order):
    if order == 0:
        return math.sqrt(c + L * eps)
    coef = 1.0
    for i in range(order):
        coef *= abs(0.5 - i)
    return coef * L**order * (c - L * eps) ** (0.5 - order)


def estimate_m_star(basis: GeometricBasis, eps_u=None, eps_b=None, order=4):
    """Upper bound of sum of C^order norms of gamma_k over their balls."""
    eps_u = basis.eps_u if eps_u is None else eps_u
    eps_b = basis.eps_b if eps_b is None else eps_b
    total = 0.0
    for funcs, eps in ((basis.lambda_u, eps_u), (basis.lambda_b, eps_b)):
        for f in funcs:
            c, L = float(f.center), f.dual_norm
            if c - L * eps <= 0:
                return math.inf
            total += sum(_sqrt_derivative_bound(c, L, eps, j) for j in range(order + 1))
    return total


def frame_matrices(func: FrameFunctional, magnetic: bool):
    """The rank-two matrix entering the amplitude identity for this frame."""
    _, k1, k2 = func.frame.arrays()
    if magnetic:
        return np.outer(k2, k1) - np.outer(k1, k2)
    return np.outer(k1, k1)
