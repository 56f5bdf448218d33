"""Brute-force oracles: finite-difference sub-Laplacian, box Dirichlet solves,
and the mean value formula on gauge spheres.

A sum-of-squares operator sum_j Y_j^2 with Y_j = sum_a c_ja(x) d_a expands to

    sum_ab (sum_j c_ja c_jb) d_a d_b + sum_b (sum_j Y_j c_jb) d_b,

which is discretised with central second differences, the four-point cross
for mixed terms and central first differences.  All three are exact on
quadratic polynomials, so the stencil is exact on quadratics whenever the
coefficients are evaluated exactly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import ndtri
from scipy.stats import qmc

from . import group_core as gc
from . import kernels as kn
from ._quad import polar_rule
from .group_core import GroupSpec


class FDError(RuntimeError):
    pass


Coefficients = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid on the box prod [lo_a, hi_a] with shape[a] points per axis."""

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple

    @classmethod
    def box(cls, spec: GroupSpec, lo, hi, hx: float, ht: float | None = None) -> "GridSpec":
        """Spacing hx on the x-axes and ht (default hx^2) on the t-axes."""
        ht = hx * hx if ht is None else ht
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        steps = np.array([hx] * spec.m + [ht] * spec.n)
        shape = tuple(int(round(s)) + 1 for s in (hi - lo) / steps)
        return cls(lo, hi, shape)

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.shape) - 1)

    def axes(self):
        return [np.linspace(a, b, n) for a, b, n in zip(self.lo, self.hi, self.shape)]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def interior_mask(self) -> np.ndarray:
        m = np.ones(self.shape, bool)
        for a in range(len(self.shape)):
            sl = [slice(None)] * len(self.shape)
            sl[a] = 0
            m[tuple(sl)] = False
            sl[a] = -1
            m[tuple(sl)] = False
        return m


def group_coefficients(spec: GroupSpec) -> Coefficients:
    """Euclidean coefficients of X_1..X_m: (..., m, m+n)."""
    return lambda x: gc.horizontal_frame(spec, x)


def flattened_coefficients(spec: GroupSpec, flat) -> Coefficients:
    """Coefficients of the X_j in flattened coordinates s = (x_1 - w(xhat), xhat)."""
    from .layer_ops import frame_derivatives

    def coeffs(s):
        x = flat.inverse(s)
        F = gc.horizontal_frame(spec, x).copy()
        F[..., :, 0] = -frame_derivatives(spec, flat.dom, x)
        F[..., 0, 0] += 1.0
        return F
    return coeffs


def _operator_terms(coeffs: Coefficients, pts: np.ndarray, eps: float = 1e-5):
    """Second-order matrix a_ab and drift b_b of sum_j Y_j^2 at pts."""
    C = coeffs(pts)                                        # (..., m, D)
    a = np.einsum("...ja,...jb->...ab", C, C)
    D = pts.shape[-1]
    dC = np.empty(C.shape + (D,))
    for c in range(D):
        e = np.zeros(D)
        e[c] = eps
        dC[..., c] = (coeffs(pts + e) - coeffs(pts - e)) / (2 * eps)
    # Y_j c_jb = sum_c c_jc d_c c_jb
    b = np.einsum("...jc,...jbc->...b", C, dC)
    return a, b


def sublaplacian_stencil(spec: GroupSpec, grid: GridSpec, u: np.ndarray, p,
                         coeffs: Coefficients | None = None) -> float:
    """sum_j X_j^2 u at the interior grid index p."""
    coeffs = coeffs or group_coefficients(spec)
    p = tuple(int(i) for i in p)
    shape = grid.shape
    if any(i < 1 or i > n - 2 for i, n in zip(p, shape)):
        raise FDError("stencil halo out of bounds")
    h = grid.spacing
    x = np.array([ax[i] for ax, i in zip(grid.axes(), p)])
    a, b = _operator_terms(coeffs, x)
    D = len(shape)

    def U(*off):
        return u[tuple(i + o for i, o in zip(p, off))]

    def e(*pairs):
        off = [0] * D
        for k, s in pairs:
            off[k] += s
        return off
    val = 0.0
    for i in range(D):
        val += a[i, i] * (U(*e((i, 1))) - 2 * U(*[0] * D) + U(*e((i, -1)))) / h[i] ** 2
        val += b[i] * (U(*e((i, 1))) - U(*e((i, -1)))) / (2 * h[i])
        for j in range(i + 1, D):
            if a[i, j] == 0.0:
                continue
            cross = (U(*e((i, 1), (j, 1))) - U(*e((i, 1), (j, -1)))
                     - U(*e((i, -1), (j, 1))) + U(*e((i, -1), (j, -1))))
            val += 2 * a[i, j] * cross / (4 * h[i] * h[j])
    return float(val)


def assemble_operator(spec: GroupSpec, grid: GridSpec, coeffs: Coefficients | None = None):
    """Sparse matrix of the stencil on all grid nodes (rows of boundary nodes empty)."""
    coeffs = coeffs or group_coefficients(spec)
    shape = grid.shape
    D = len(shape)
    h = grid.spacing
    pts = grid.points()
    mask = grid.interior_mask()
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    I = idx[mask]
    P = pts[mask]
    a, b = _operator_terms(coeffs, P)
    rows, cols, vals = [], [], []
    sub = np.argwhere(mask)

    def nb(off):
        return idx[tuple((sub + np.array(off)).T)]

    def add(off, v):
        rows.append(I)
        cols.append(nb(off))
        vals.append(v)
    zero = [0] * D
    diag = np.zeros(len(I))
    for i in range(D):
        ei = np.eye(D, dtype=int)[i]
        add(ei, a[:, i, i] / h[i] ** 2 + b[:, i] / (2 * h[i]))
        add(-ei, a[:, i, i] / h[i] ** 2 - b[:, i] / (2 * h[i]))
        diag -= 2 * a[:, i, i] / h[i] ** 2
        for j in range(i + 1, D):
            cij = 2 * a[:, i, j] / (4 * h[i] * h[j])
            if not np.any(cij):
                continue
            ej = np.eye(D, dtype=int)[j]
            for si, sj in itertools.product((1, -1), repeat=2):
                add(si * ei + sj * ej, si * sj * cij)
    add(zero, diag)
    n = idx.size
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return A


@dataclass
class FDSolution:
    grid: GridSpec
    u: np.ndarray
    residual: float
    log: list


def fd_dirichlet_solve(spec: GroupSpec, grid: GridSpec, f, g,
                       coeffs: Coefficients | None = None, tol: float = 1e-10) -> FDSolution:
    """Solve sum X_j^2 u = f inside the box, u = g on the faces.

    ``f`` and ``g`` are callables on packed points or arrays on the grid.
    A sparse direct solve is used; a GMRES refinement pass is added if the
    residual misses ``tol``.
    """
    pts = grid.points()
    fv = f(pts) if callable(f) else np.broadcast_to(np.asarray(f, float), grid.shape)
    mask = grid.interior_mask()
    bvals = np.zeros(grid.shape)
    if callable(g):
        bvals[~mask] = g(pts[~mask])
    else:
        gv = np.asarray(g, float)
        bvals[~mask] = gv[~mask] if gv.shape == grid.shape else gv
    A = assemble_operator(spec, grid, coeffs)
    inner = mask.ravel()
    ub = bvals.ravel()
    A_ii = A[inner][:, inner].tocsc()
    rhs = np.asarray(fv, float).ravel()[inner] - A[inner][:, ~inner] @ ub[~inner]
    ui = spla.spsolve(A_ii, rhs)
    res = float(np.max(np.abs(A_ii @ ui - rhs))) if len(rhs) else 0.0
    log = [(0, res)]
    if res > tol:
        corr, info = spla.gmres(A_ii, rhs - A_ii @ ui, rtol=1e-14, maxiter=200)
        ui = ui + corr
        res = float(np.max(np.abs(A_ii @ ui - rhs)))
        log.append((1, res))
        if res > tol:
            raise FDError(f"FD solve residual {res:.3e} above tolerance")
    u = ub.copy()
    u[inner] = ui
    return FDSolution(grid, u.reshape(grid.shape), res, log)


def interpolate(sol: FDSolution, points) -> np.ndarray:
    from scipy.interpolate import RegularGridInterpolator
    it = RegularGridInterpolator(sol.grid.axes(), sol.u, method="cubic")
    return it(np.atleast_2d(points))


def dump_grid_csv(sol: FDSolution, path) -> None:
    import csv
    shape = sol.grid.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"i{a}" for a in range(len(shape))] + ["value"])
        for ix in np.ndindex(*shape):
            w.writerow(list(ix) + [repr(float(sol.u[ix]))])


# --------------------------------------------------------------------------
# Mean value formula
# --------------------------------------------------------------------------


def _sphere_dirs(d: int, U: np.ndarray) -> np.ndarray:
    """Uniform points on S^{d-1} from uniforms (columns of U, d of them; d=1 uses one)."""
    if d == 1:
        return np.where(U[:, :1] < 0.5, 1.0, -1.0)
    g = ndtri(np.clip(U, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def mean_value_mc(spec: GroupSpec, psi, x, r: float, n_samples: int = 2 ** 14,
                  seed: int = 0) -> float:
    """Quasi Monte Carlo value of the flux-weighted sphere mean of psi about x.

    On the gauge sphere |x^{-1} o eta| = r the weight <grad Gamma, nu> dsigma
    is C_Q (Q-2) |x_omega|^2 dmu(omega) in the homogeneous polar parametrisation.
    Samples: u uniform (theta = pi/2 - u^2) and uniform directions, scrambled
    Sobol with the given seed.
    """
    cq = spec.require_cq()
    a, c = spec.m, spec.n
    umax = np.sqrt(np.pi / 2)
    da = 1 if a == 1 else a
    dc = 1 if c == 1 else c
    mexp = int(np.ceil(np.log2(n_samples)))
    U = qmc.Sobol(1 + da + dc, scramble=True, seed=seed).random_base2(mexp)
    u = U[:, 0] * umax
    wa = _sphere_dirs(a, U[:, 1:1 + da])
    wc = _sphere_dirs(c, U[:, 1 + da:])
    ct = np.sin(u * u)
    st = np.cos(u * u)
    # dmu density in u times |S^{a-1}| |S^{c-1}| (directions sampled uniformly)
    from scipy.special import gamma as G
    area = lambda d: 2.0 * np.pi ** (d / 2) / G(d / 2)  # noqa: E731
    if a == 1:
        dens = 2.0 * np.where(u > 0, u / np.sqrt(np.maximum(ct, 1e-300)), 1.0)
    else:
        dens = 2.0 * u * ct ** (0.5 * (a - 2))
    dens = dens * st ** (c - 1) * 4.0 ** (-c) * umax * area(a) * area(c)
    omega = np.concatenate([np.sqrt(ct)[:, None] * wa, 0.25 * st[:, None] * wc], axis=1)
    pts = omega.copy()
    pts[:, :a] *= r
    pts[:, a:] *= r * r
    eta = gc.mul(spec, np.asarray(x, float)[None], pts)
    wgt = cq * (spec.Q - 2.0) * ct * dens
    return float(np.mean(wgt * psi(eta)))


def mean_value_quadrature(spec: GroupSpec, psi, x, r: float, n_theta: int = 48,
                          sphere_order: int = 10) -> float:
    """Deterministic version of :func:`mean_value_mc` (product Gauss rule)."""
    cq = spec.require_cq()
    rule = polar_rule(spec.m, spec.n, n_theta, sphere_order)
    eta = gc.mul(spec, np.asarray(x, float)[None], rule.points(r))
    return float(cq * (spec.Q - 2.0) * np.sum(rule.weights * rule.cos_theta * psi(eta)))


def harmonic_residual(spec: GroupSpec, u: Callable, points, h: float) -> np.ndarray:
    """Stencil value of sum X_j^2 u at each point using a local 3^D grid of spacing (h, h^2)."""
    points = np.atleast_2d(np.asarray(points, float))
    out = []
    steps = np.array([h] * spec.m + [h * h] * spec.n)
    for p in points:
        grid = GridSpec(p - steps, p + steps, (3,) * spec.dim)
        vals = u(grid.points().reshape(-1, spec.dim)).reshape(grid.shape)
        out.append(sublaplacian_stencil(spec, grid, vals, (1,) * spec.dim))
    return np.array(out)


def gamma_harmonicity(spec: GroupSpec, points, pole, h: float) -> np.ndarray:
    """Stencil residual of Gamma(., pole) (an oracle self-check)."""
    return harmonic_residual(spec, lambda X: kn.gamma_values(spec, X, np.asarray(pole, float)),
                             points, h)
