"""Double layer potential on the plane {x_1 = 0} and its boundary operators.

Conventions
-----------
* Plane points are packed as (x_2..x_m, t).  A point above the plane is
  addressed by its foot: ``x = (0, foot) o (x1 e_1)``, i.e. the X_1 flow.
* Densities are node values on a :class:`~hlayer.plane_mesh.PanelMesh`.
* ``K`` is the punctured Nystrom matrix ``K_ij = w_j k(x_i, x_j)``, zero on the
  diagonal.  On the symmetric lattice the skipped polynomial part integrates
  to zero exactly, which is what makes the punctured rule a principal value.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import group_core as gc
from . import kernels as kn
from ._quad import graded_radial_rule, polar_rule
from .group_core import GroupSpec
from .plane_mesh import PanelMesh, plane_exp


class NearBoundaryError(ValueError):
    pass


class InvertibilityError(RuntimeError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryFunction:
    mesh: PanelMesh
    values: np.ndarray
    support_radius: float = np.inf

    def __post_init__(self):
        if self.values.shape != (self.mesh.size,):
            raise ValueError("values must align with mesh nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite density values")


def sample(mesh: PanelMesh, f, support_radius: float = np.inf) -> BoundaryFunction:
    vals = f(mesh.nodes) if callable(f) else np.asarray(f, float)
    return BoundaryFunction(mesh, np.asarray(vals, float), support_radius)


def _values(g, mesh: PanelMesh) -> np.ndarray:
    if isinstance(g, BoundaryFunction):
        return g.values
    if callable(g):
        return np.asarray(g(mesh.nodes), float)
    return np.asarray(g, float)


@dataclass(frozen=True)
class BoundaryOperator:
    matrix: np.ndarray
    mesh: PanelMesh
    kind: str
    pv_correction: dict = field(default_factory=dict)

    def __matmul__(self, v):
        return self.matrix @ v


# --------------------------------------------------------------------------
# Kernels as functions of (point above the plane, plane nodes)
# --------------------------------------------------------------------------


def foot_of(spec: GroupSpec, x) -> tuple[np.ndarray, float]:
    """Split a packed group point as (0, foot) o (x1 e_1)."""
    x = np.asarray(x, float)
    x1 = float(x[0])
    xh = x[1:spec.m]
    t = x[spec.m:] - 0.5 * x1 * (spec.a1[:, 1:] @ xh)
    return np.concatenate([xh, t]), x1


def point_above(spec: GroupSpec, foot, x1: float) -> np.ndarray:
    """(0, foot) o (x1 e_1)."""
    e = np.zeros(spec.dim)
    e[0] = x1
    return gc.mul(spec, gc.embed_plane(spec, np.asarray(foot, float)), e)


def layer_kernel_at(spec: GroupSpec, x, yhat) -> np.ndarray:
    """(k_1 + k)(x, yhat): the normal derivative X_1^eta Gamma on {y_1 = 0}."""
    k1, k = kn.kernel_k1k_values(spec, np.asarray(x, float), yhat)
    return k1 + k


def tilde_kernel_at(spec: GroupSpec, x, yhat) -> np.ndarray:
    """(k~_1 + k~)(x, yhat) with level independent coordinates."""
    k1, k = kn.tilde_kernels_values(spec, np.asarray(x, float), yhat)
    return k1 + k


# --------------------------------------------------------------------------
# Corrected evaluation near the plane
# --------------------------------------------------------------------------


def _poly_basis(spec: GroupSpec, w: np.ndarray) -> np.ndarray:
    """Anisotropic degree <= 2 monomials in Log coordinates: 1, vhat, z, v_i v_j."""
    mh = spec.m - 1
    vh, z = w[..., :mh], w[..., mh:]
    cols = [np.ones(w.shape[:-1])]
    cols += [vh[..., i] for i in range(mh)]
    cols += [z[..., k] for k in range(spec.n)]
    cols += [vh[..., i] * vh[..., j] for i in range(mh) for j in range(i, mh)]
    return np.stack(cols, axis=-1)


def _cutoff(spec: GroupSpec, w, rho: float) -> np.ndarray:
    d4 = gc.plane_gauge(spec, w) ** 4
    return np.clip(1.0 - d4 / rho ** 4, 0.0, None) ** 4


@dataclass
class NearField:
    """Parameters of the polynomial-subtraction rule."""

    fit_radius: float = 3.0        # in units of h
    cutoff_radius: float = 4.0     # in units of h
    n_theta: int = 24
    sphere_order: int = 6
    radial_order: int = 8
    n_inner: int = 12


def _at_foot(mesh: PanelMesh, w) -> np.ndarray:
    """Nodes whose Log offset from the foot is rounding noise, per lattice axis.

    A gauge tolerance is too strict: an offset of 1e-18 in t is already
    1e-9 in d~.
    """
    return np.max(np.abs(w) / mesh.spacing, axis=-1) < 1e-9


def fit_local_poly(spec: GroupSpec, mesh: PanelMesh, values: np.ndarray, foot,
                   radius: float) -> tuple[np.ndarray, int | None]:
    """Least-squares degree-2 anisotropic polynomial about ``foot``.

    Returns coefficients in the order of ``_poly_basis`` and the index of
    the node at ``foot`` (if any); the constant is then pinned to that node.
    """
    w = gc.plane_log(spec, foot, mesh.nodes)
    d = gc.plane_gauge(spec, w)
    sel = np.nonzero(d < radius)[0]
    B = _poly_basis(spec, w[sel])
    if len(sel) < 2 * B.shape[1]:
        raise NearBoundaryError("too few nodes for the local fit")
    at = sel[_at_foot(mesh, w[sel])]
    node = int(at[0]) if len(at) else None
    scale = np.ones(B.shape[1])
    # rescale columns by their homogeneous degree for conditioning
    mh = spec.m - 1
    deg = np.array([0] + [1] * mh + [2] * spec.n + [2] * (B.shape[1] - 1 - mh - spec.n))
    scale = mesh.h ** -deg.astype(float)
    B = B * scale
    y = values[sel]
    if node is not None:
        y = y - values[node]
        coef, *_ = np.linalg.lstsq(B[:, 1:], y, rcond=None)
        coef = np.concatenate([[values[node] / scale[0]], coef])
    else:
        coef, *_ = np.linalg.lstsq(B, y, rcond=None)
    return coef * scale, node


def _polar_term(spec, kernel, x, foot, coef, rho, x1, nf: NearField, chart=None) -> float:
    """Integral of kernel(x, foot o w) * P(w) * chi(w) dw on d~(w) < rho.

    With ``coef=None`` the integrals of the separate basis monomials are
    returned.  ``chart`` maps polar coordinates omega to plane points and the Jacobian
    d omega / d yhat; it lets the rule be centred where the kernel is
    singular when that set is not a plane-Log ball about the foot.
    """
    rule = polar_rule(spec.m - 1, spec.n, nf.n_theta, nf.sphere_order)
    r_out = rho if chart is None else 1.25 * rho
    s, ws = graded_radial_rule(max(abs(x1), 1e-14), r_out, order=nf.radial_order,
                               n_inner=nf.n_inner)
    q = spec.Q - 1
    total = 0.0
    for sk, wk in zip(s, ws):
        om = rule.points(sk)
        if chart is None:
            pts, jac = plane_exp(spec, foot, om), 1.0
        else:
            pts, jac = chart(om)
        w = gc.plane_log(spec, foot, pts)
        F = kernel(x, pts)
        B = _poly_basis(spec, w)
        total = total + wk * sk ** (q - 1) * ((rule.weights * F * _cutoff(spec, w, rho) / jac) @ B)
    return total if coef is None else float(total @ coef)


def _fit_map(spec: GroupSpec, mesh: PanelMesh, foot, radius: float):
    """Linear map values -> coefficients of :func:`fit_local_poly`: (sel, L, node).

    coef = L @ values[sel]; mirrors fit_local_poly, including the pinned
    constant when ``foot`` is a node.
    """
    w = gc.plane_log(spec, foot, mesh.nodes)
    d = gc.plane_gauge(spec, w)
    sel = np.nonzero(d < radius)[0]
    B = _poly_basis(spec, w[sel])
    nb = B.shape[1]
    if len(sel) < 2 * nb:
        raise NearBoundaryError("too few nodes for the local fit")
    at = np.nonzero(_at_foot(mesh, w[sel]))[0]
    mh = spec.m - 1
    deg = np.array([0] + [1] * mh + [2] * spec.n + [2] * (nb - 1 - mh - spec.n))
    scale = mesh.h ** -deg.astype(float)
    Bs = B * scale
    L = np.zeros((nb, len(sel)))
    if len(at):
        k = at[0]
        pinv = np.linalg.pinv(Bs[:, 1:])
        L[1:] = pinv
        L[1:, k] -= pinv.sum(axis=1)
        L[0, k] = 1.0 / scale[0]
        node = int(sel[k])
    else:
        L = np.linalg.pinv(Bs)
        node = None
    return sel, L * scale[:, None], node


def _corrected_row(spec, mesh, kernel, x, foot, x1, nf: NearField, chart=None) -> np.ndarray:
    """Row c with c @ values = _corrected_sum(values) (the rule is linear in values)."""
    h = mesh.h
    rho = nf.cutoff_radius * h
    sel, L, node = _fit_map(spec, mesh, foot, nf.fit_radius * h)
    w = gc.plane_log(spec, foot, mesh.nodes)
    a = mesh.weights * kernel(x, mesh.nodes) * (1.0 - _cutoff(spec, w, 2.0 * h))
    if node is not None:
        a[node] = 0.0
    B = _poly_basis(spec, w)
    moments = (a * _cutoff(spec, w, rho)) @ B
    polar = _polar_term(spec, kernel, x, foot, None, rho, x1, nf, chart)
    c = a.copy()
    c[sel] += (polar - moments) @ L
    return c


def _corrected_sum(spec, mesh, values, kernel, x, foot, x1, nf: NearField, chart=None):
    h = mesh.h
    rho = nf.cutoff_radius * h
    coef, node = fit_local_poly(spec, mesh, values, foot, nf.fit_radius * h)
    w = gc.plane_log(spec, foot, mesh.nodes)
    P = _poly_basis(spec, w) @ coef
    remainder = values - P * _cutoff(spec, w, rho)
    # the remainder is only O(h^3) near the foot, but the mesh sum of the
    # kernel there is unreliable once |x1| << h with the foot between nodes,
    # so taper it away inside 2h
    remainder *= 1.0 - _cutoff(spec, w, 2.0 * h)
    F = kernel(x, mesh.nodes)
    if node is not None:
        remainder[node] = 0.0
        F[node] = 0.0
    return float(np.dot(mesh.weights * F, remainder)) + _polar_term(
        spec, kernel, x, foot, coef, rho, x1, nf, chart)


def _interior_ok(spec, mesh, foot, radius) -> bool:
    d = gc.plane_gauge(spec, gc.plane_log(spec, mesh.center, foot))
    return bool(d + radius < mesh.patch_radius - 2 * mesh.h)


def eval_double_layer(spec: GroupSpec, mesh: PanelMesh, g, x, method: str = "auto",
                      near: NearField | None = None) -> float:
    """D(g)(x) = integral of (k_1 + k)(x, y) g(y) dy over the mesh.

    ``method="direct"`` is the plain mesh sum and refuses points within h^2
    of the plane.  ``method="corrected"`` subtracts a local degree-2 fit of
    g near the foot of x and integrates that part with a graded polar rule,
    which stays accurate as x_1 -> 0.  ``auto`` uses the corrected rule
    when |x_1| < 8h and the foot is well inside the patch.
    """
    vals = _values(g, mesh)
    x = np.asarray(x, float)
    foot, x1 = foot_of(spec, x)
    if x1 == 0.0:
        raise NearBoundaryError("x lies on the plane; use jump_test")
    near = near or NearField()
    kern = lambda xx, y: layer_kernel_at(spec, xx, y)  # noqa: E731
    if method == "auto":
        ok = _interior_ok(spec, mesh, foot, near.cutoff_radius * mesh.h)
        method = "corrected" if (abs(x1) < 8 * mesh.h and ok) else "direct"
    if method == "direct":
        if abs(x1) < mesh.h ** 2:
            warnings.warn("point within h^2 of the plane; direct quadrature refused")
            raise NearBoundaryError("x within h^2 of the plane")
        return float(np.dot(mesh.weights * kern(x, mesh.nodes), vals))
    if method == "corrected":
        return _corrected_sum(spec, mesh, vals, kern, x, foot, x1, near)
    raise ValueError(f"unknown method {method!r}")


def eval_tilde_layer(spec: GroupSpec, mesh: PanelMesh, g, xhat, r: float,
                     near: NearField | None = None) -> float:
    """(K~_1 + K~)(g) at the plane point ``xhat`` of level r (corrected rule)."""
    vals = _values(g, mesh)
    xhat = np.asarray(xhat, float)
    x = np.concatenate([[r], xhat])
    kern = lambda xx, y: tilde_kernel_at(spec, xx, y)  # noqa: E731
    return _corrected_sum(spec, mesh, vals, kern, x, xhat, r, near or NearField())


# --------------------------------------------------------------------------
# Half flux
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FluxReport:
    levels: np.ndarray
    values: np.ndarray
    limit: float


def _extrapolate(levels, values) -> float:
    """Linear extrapolation to level 0 from the two smallest levels."""
    l1, l2 = levels[-2], levels[-1]
    v1, v2 = values[-2], values[-1]
    return float(v2 - (v1 - v2) * l2 / (l1 - l2))


def half_flux_test(spec: GroupSpec, xhat0, R: float, levels, n_theta: int = 32,
                   sphere_order: int = 8) -> FluxReport:
    """Integral of (k_1 + k)(x, .) over the d~-ball B(xhat0, R), x above xhat0.

    The ball is integrated exactly in homogeneous polar coordinates with a
    radial rule graded towards the scale |x_1|.
    """
    levels = np.asarray(levels, float)
    if np.any(np.diff(np.abs(levels)) >= 0):
        raise ValueError("levels must decrease in absolute value")
    xhat0 = np.asarray(xhat0, float)
    rule = polar_rule(spec.m - 1, spec.n, n_theta, sphere_order)
    q = spec.Q - 1
    vals = []
    for lv in levels:
        x = point_above(spec, xhat0, lv)
        s, ws = graded_radial_rule(abs(lv), R, order=10, n_inner=14)
        tot = 0.0
        for sk, wk in zip(s, ws):
            pts = plane_exp(spec, xhat0, rule.points(sk))
            tot += wk * sk ** (q - 1) * np.dot(rule.weights, layer_kernel_at(spec, x, pts))
        vals.append(tot)
    vals = np.array(vals)
    return FluxReport(levels, vals, _extrapolate(np.abs(levels), vals))


# --------------------------------------------------------------------------
# Assembly
# --------------------------------------------------------------------------


def kernel_row(spec: GroupSpec, mesh: PanelMesh, i: int, kernel=None) -> np.ndarray:
    """Row i of the punctured Nystrom matrix."""
    if kernel is None:
        kernel = lambda a, b: kn.boundary_kernel_values(spec, a, b)  # noqa: E731
    with np.errstate(divide="ignore", invalid="ignore"):
        row = kernel(mesh.nodes[i], mesh.nodes) * mesh.weights
    row[i] = 0.0
    return row


def moment_residuals(spec: GroupSpec, mesh: PanelMesh, matrix: np.ndarray,
                     rows=None) -> np.ndarray:
    """Discrete K applied to the monomials 1, vhat, z, v_i v_j about each row node."""
    rows = np.arange(mesh.size) if rows is None else np.asarray(rows)
    out = np.empty((len(rows), _poly_basis(spec, np.zeros(spec.plane_dim)).shape[-1]))
    for r, i in enumerate(rows):
        B = _poly_basis(spec, gc.plane_log(spec, mesh.nodes[i], mesh.nodes))
        out[r] = matrix[i] @ B
    return out


def assemble_K(spec: GroupSpec, mesh: PanelMesh, block: int = 512) -> BoundaryOperator:
    """Punctured Nystrom matrix of the boundary kernel k (principal value)."""
    spec.require_cq()
    N = mesh.size
    M = np.empty((N, N))
    nodes = mesh.nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, N, block):
            M[s:s + block] = kn.boundary_kernel_values(
                spec, nodes[s:s + block, None, :], nodes[None, :, :]) * mesh.weights
    np.fill_diagonal(M, 0.0)
    pv = {"diagonal": "punctured; degree<=2 part cancels on the symmetric lattice",
          "dropped": "Taylor remainder inside the central cell (O(h^2))"}
    return BoundaryOperator(M, mesh, "K", pv)


def apply_K_blocked(spec: GroupSpec, mesh: PanelMesh, F, block: int = 256) -> np.ndarray:
    """K @ F without storing K (F of shape (N,) or (N, k))."""
    F = np.asarray(F, float)
    out = np.empty(F.shape)
    nodes = mesh.nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, mesh.size, block):
            rows = kn.boundary_kernel_values(spec, nodes[s:s + block, None, :],
                                             nodes[None, :, :]) * mesh.weights
            idx = np.arange(s, min(s + block, mesh.size))
            rows[idx - s, idx] = 0.0
            out[s:s + block] = rows @ F
    return out


def assemble_K_tilde(spec: GroupSpec, mesh: PanelMesh, r: float) -> BoundaryOperator:
    """Plain mesh matrix of (k~_1 + k~) at level r (valid for |r| >~ 2h)."""
    N = mesh.size
    M = np.empty((N, N))
    for s in range(0, N, 512):
        x = gc.embed_plane(spec, mesh.nodes[s:s + 512], r)
        M[s:s + 512] = tilde_kernel_at(spec, x[:, None, :], mesh.nodes[None]) * mesh.weights
    return BoundaryOperator(M, mesh, "K_tilde", {"level": r})


# --------------------------------------------------------------------------
# T_t and its inversion
# --------------------------------------------------------------------------


def apply_T(op: BoundaryOperator, t: float, g, extra: BoundaryOperator | None = None):
    """T_t g = g/2 + t (K [+ K_R]) g."""
    v = _values(g, op.mesh)
    if v.shape != (op.mesh.size,):
        raise ValueError("shape mismatch")
    Kv = op.matrix @ v
    if extra is not None:
        Kv = Kv + extra.matrix @ v
    return BoundaryFunction(op.mesh, 0.5 * v + t * Kv)


def _system(op, extra, t=1.0):
    A = t * op.matrix
    if extra is not None:
        A = A + t * extra.matrix
    A = A.copy()
    A[np.diag_indices_from(A)] += 0.5
    return A


def sigma_min(op: BoundaryOperator, extra: BoundaryOperator | None = None,
              t: float = 1.0) -> float:
    """Smallest singular value of T_t (dense SVD)."""
    return float(sla.svdvals(_system(op, extra, t), check_finite=False)[-1])


def _sigma_min_estimate(lu, n: int, iters: int = 30, seed: int = 0) -> float:
    """Inverse power iteration on (A^T A)^{-1} with a cached LU."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = sla.lu_solve(lu, v, trans=1)     # A^{-T} v
        u = sla.lu_solve(lu, u)              # (A A^T)^{-1} v, same spectrum as (A^T A)^{-1}
        lam = np.linalg.norm(u)
        v = u / lam
    return float(1.0 / np.sqrt(lam))


@dataclass(frozen=True)
class SolveInfo:
    mode: str
    residual: float
    sigma_min_estimate: float
    iterations: list = field(default_factory=list)
    homotopy_gap: float = np.nan


def solve_density(op: BoundaryOperator, g, extra: BoundaryOperator | None = None,
                  mode: str = "direct", steps: int = 8, max_inner: int = 50,
                  tol: float = 1e-13) -> tuple[BoundaryFunction, SolveInfo]:
    """Solve (I/2 + K [+ K_R]) phi = g.

    ``mode="direct"`` uses one dense LU; ``"homotopy"`` walks t = 0 -> 1 in
    ``steps`` steps, solving T_{t+dt} phi = g by Neumann iteration
    preconditioned with T_t^{-1}; ``"both"`` runs the two and records their
    gap.
    """
    gv = _values(g, op.mesh)
    N = op.mesh.size
    if not np.any(gv):
        return BoundaryFunction(op.mesh, np.zeros(N)), SolveInfo(mode, 0.0, np.nan)
    A1 = _system(op, extra, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(A1, check_finite=False)
    if not np.all(np.abs(np.diag(lu[0])) > 0):
        raise InvertibilityError("I/2 + K is singular (zero pivot)")
    smin = _sigma_min_estimate(lu, N)
    if smin < 1e-10:
        raise InvertibilityError(f"I/2 + K is numerically singular (sigma_min ~ {smin:.3e})")
    phi_d = sla.lu_solve(lu, gv)
    iters = []
    phi_h = None
    if mode in ("homotopy", "both"):
        phi = 2.0 * gv                       # T_0^{-1} g
        ts = np.linspace(0.0, 1.0, steps + 1)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            lu0 = sla.lu_factor(_system(op, extra, t0), check_finite=False) if t0 > 0 else None
            A_next = _system(op, extra, t1)
            for it in range(max_inner):
                res = gv - A_next @ phi
                rn = np.linalg.norm(res, np.inf) / np.linalg.norm(gv, np.inf)
                if rn < tol:
                    break
                phi = phi + (sla.lu_solve(lu0, res) if lu0 is not None else 2.0 * res)
            iters.append((float(t1), it, float(rn)))
        phi_h = phi
    if mode == "direct":
        phi = phi_d
    elif mode == "homotopy":
        phi = phi_h
    elif mode == "both":
        phi = phi_d
    else:
        raise ValueError(f"unknown mode {mode!r}")
    res = np.linalg.norm(A1 @ phi - gv, np.inf) / np.linalg.norm(gv, np.inf)
    gap = np.nan if phi_h is None else float(np.max(np.abs(phi_h - phi_d)) /
                                             max(np.max(np.abs(phi_d)), 1e-300))
    return BoundaryFunction(op.mesh, phi), SolveInfo(mode, float(res), smin, iters, gap)


# --------------------------------------------------------------------------
# Jump relations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpReport:
    node: int
    levels: np.ndarray
    above: np.ndarray
    below: np.ndarray
    limit_above: float
    limit_below: float
    target_above: float
    target_below: float
    g0: float
    Kg0: float
    rate: float

    def rows(self):
        for lv, a, b in zip(self.levels, self.above, self.below):
            yield (lv, a, b, self.target_above, self.target_below)


def _rate(levels, errs) -> float:
    errs = np.maximum(np.abs(errs), 1e-300)
    if len(levels) < 2:
        return np.nan
    p = np.polyfit(np.log(levels), np.log(errs), 1)
    return float(p[0])


def jump_test(spec: GroupSpec, mesh: PanelMesh, g, node: int, levels,
              near: NearField | None = None) -> JumpReport:
    """Two-sided limits of D(g) at the mesh node ``node``.

    Targets are +-g/2 + K g with K the punctured Nystrom row at the node.
    """
    levels = np.asarray(levels, float)
    if np.any(levels <= 0) or np.any(np.diff(levels) >= 0):
        raise ValueError("levels must be positive and strictly decreasing")
    near = near or NearField()
    vals = _values(g, mesh)
    foot = mesh.nodes[node]
    if not _interior_ok(spec, mesh, foot, near.cutoff_radius * mesh.h):
        raise NearBoundaryError("probe node too close to the patch edge")
    Kg = float(kernel_row(spec, mesh, node) @ vals)
    g0 = float(vals[node])
    up, dn = [], []
    for lv in levels:
        up.append(eval_double_layer(spec, mesh, vals, point_above(spec, foot, lv),
                                    "corrected", near))
        dn.append(eval_double_layer(spec, mesh, vals, point_above(spec, foot, -lv),
                                    "corrected", near))
    up, dn = np.array(up), np.array(dn)
    ta, tb = 0.5 * g0 + Kg, -0.5 * g0 + Kg
    la, lb = _extrapolate(levels, up), _extrapolate(levels, dn)
    err = np.maximum(np.abs(up - ta), np.abs(dn - tb))
    return JumpReport(node, levels, up, dn, la, lb, ta, tb, g0, Kg, _rate(levels, err))


# --------------------------------------------------------------------------
# Reflection
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReflectionReport:
    r: float
    norm_plus: float
    norm_minus: float
    limit_plus: float
    limit_minus: float
    limit_minus_same_g: float
    symmetry_defect: float


def reflection_check(spec: GroupSpec, mesh: PanelMesh, g, r: float, op: BoundaryOperator,
                     alpha: float = 0.5, probe_radius: float | None = None,
                     near: NearField | None = None) -> ReflectionReport:
    """Compare C^{2,alpha} norms of the tilde potentials on the levels +r and -r.

    norm_plus is the norm of (K~_1 + K~) g on the level r, norm_minus the norm
    of (K~_1 + K~)(g o R) on the level -r with R: vhat -> -vhat.  The limit
    norms are those of (I/2 + K) g and (-I/2 + K)(g o R) from the discrete K;
    ``limit_minus_same_g`` is the norm of (-I/2 + K) g for comparison.
    """
    from . import holder_norms as hn
    from .densities import reflect_plane

    if spec.A_hat.any():
        raise DomainError("reflection_check uses lattice differences (needs A_hat = 0)")
    perm = mesh.mirror_index(range(spec.m - 1))
    if np.any(perm < 0):
        raise DomainError("mesh is not symmetric under the reflection")
    vals = _values(g, mesh)
    gR = vals[perm] if not callable(g) else g(reflect_plane(spec, mesh.nodes))
    near = near or NearField()
    pr = probe_radius if probe_radius is not None else 0.6 * mesh.patch_radius
    rad = mesh.radius_of_nodes()
    probes = np.nonzero(rad < pr)[0]
    fp = np.zeros(mesh.size)
    fm = np.zeros(mesh.size)
    for i in probes:
        fp[i] = eval_tilde_layer(spec, mesh, vals, mesh.nodes[i], r, near)
        fm[i] = eval_tilde_layer(spec, mesh, gR, mesh.nodes[i], -r, near)
    Kv = op.matrix @ vals
    KvR = op.matrix @ gR
    lp = 0.5 * vals + Kv
    lm = -0.5 * gR + KvR
    lm_same = -0.5 * vals + Kv
    nrm = lambda f: hn.c2alpha_nodes(spec, mesh, f, alpha, 0.6 * pr).norm  # noqa: E731
    n_p, n_m = nrm(fp), nrm(fm)
    return ReflectionReport(r, n_p, n_m, nrm(lp), nrm(lm), nrm(lm_same), abs(n_p - n_m))


# --------------------------------------------------------------------------
# Graph domains and flattening
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphDomain:
    """Domain {x_1 > w(xhat)} over the plane; w acts on packed plane points."""

    w: Callable[[np.ndarray], np.ndarray]
    radius: float
    grad: Callable[[np.ndarray], np.ndarray] | None = None

    def gradient(self, p) -> np.ndarray:
        """Euclidean gradient of w in the packed plane coordinates."""
        p = np.asarray(p, float)
        if self.grad is not None:
            return np.asarray(self.grad(p), float)
        eps = 1e-5
        out = np.empty(p.shape)
        for a in range(p.shape[-1]):
            e = np.zeros(p.shape[-1])
            e[a] = eps
            out[..., a] = (self.w(p + e) - self.w(p - e)) / (2 * eps)
        return out


def quadratic_graph(spec: GroupSpec, eps: float = 0.1, rho: float = 0.6) -> GraphDomain:
    """w = eps |s|^2 * bump_rho(s), |s| Euclidean in the plane coordinates."""
    from .densities import bump

    b = bump(spec, None, rho)

    def w(p):
        p = np.asarray(p, float)
        return eps * np.sum(p * p, axis=-1) * b(p)
    return GraphDomain(w, rho)


def frame_derivatives(spec: GroupSpec, dom: GraphDomain, xi) -> np.ndarray:
    """X_j w at packed group points xi (w extended constantly in x_1): (..., m)."""
    xi = np.asarray(xi, float)
    F = gc.horizontal_frame(spec, xi)            # (..., m, m+n)
    gw = dom.gradient(xi[..., 1:])               # (..., m-1+n)
    return np.einsum("...ja,...a->...j", F[..., :, 1:], gw)


@dataclass(frozen=True)
class Flattening:
    spec: GroupSpec
    dom: GraphDomain

    def forward(self, x):
        """Xi(x) = (x_1 - w(xhat), xhat)."""
        x = np.array(x, dtype=float)
        x[..., 0] -= self.dom.w(x[..., 1:])
        return x

    def inverse(self, s):
        s = np.array(s, dtype=float)
        s[..., 0] += self.dom.w(s[..., 1:])
        return s

    def foot_of(self, x, iters: int = 50) -> tuple[np.ndarray, float]:
        """Split x as (w(f), f) o (sigma e_1): the graph analogue of :func:`foot_of`.

        Only the vertical part of f depends on sigma, through the twist
        sigma/2 <A_1 vhat>; it is found by fixed-point iteration, which
        contracts because |grad w| |vhat| is small on the patch.
        """
        spec = self.spec
        x = np.asarray(x, float)
        f = x[1:].copy()
        twist = 0.5 * (spec.a1[:, 1:] @ x[1:spec.m])
        for _ in range(iters):
            sigma = float(x[0] - self.dom.w(f))
            new = x[spec.m:] - sigma * twist
            done = np.max(np.abs(new - f[spec.m - 1:])) <= 1e-15
            f[spec.m - 1:] = new
            if done:
                break
        return f, float(x[0] - self.dom.w(f))

    def point_above(self, foot, sigma: float) -> np.ndarray:
        """(w(f), f) o (sigma e_1)."""
        e = np.zeros(self.spec.dim)
        e[0] = sigma
        return gc.mul(self.spec, self.boundary_point(foot), e)

    def chart(self, foot, iters: int = 50):
        """Plane chart omega -> yhat with omega = plane part of b^{-1} o (w(yhat), yhat).

        b is the graph point over ``foot``; in omega the curved kernel of a
        point b o (sigma e_1) is singular at omega = 0 only.  Returns a
        function giving (yhat, det d omega / d yhat).
        """
        spec = self.spec
        m = spec.m
        b = self.boundary_point(np.asarray(foot, float))
        # t-part of b^{-1} o eta is eta_t - b_t - <A b, eta>/2; only eta_1 = w(yhat)
        # depends on yhat_t, through (A^k b)_1
        Ab = np.einsum("kij,j->ki", spec.A, b[:m])       # (n, m)

        def to_plane(om):
            om = np.asarray(om, float)
            y = np.empty(om.shape)
            y[..., :m - 1] = om[..., :m - 1] + b[1:m]
            y[..., m - 1:] = om[..., m - 1:] + b[m:]
            for _ in range(iters):
                eta = np.concatenate([self.dom.w(y)[..., None], y[..., :m - 1]], -1)
                new = om[..., m - 1:] + b[m:] + 0.5 * eta @ Ab.T
                done = np.max(np.abs(new - y[..., m - 1:])) <= 1e-15
                y[..., m - 1:] = new
                if done:
                    break
            gw = self.dom.gradient(y)[..., m - 1:]          # d w / d t
            J = np.eye(spec.n) - 0.5 * Ab[:, 0][:, None] * gw[..., None, :]
            return y, np.linalg.det(J)
        return to_plane

    def boundary_point(self, yhat) -> np.ndarray:
        yhat = np.asarray(yhat, float)
        return np.concatenate([self.dom.w(yhat)[..., None], yhat], axis=-1)

    def curved_kernel(self, x, yhat) -> np.ndarray:
        """Horizontal normal derivative of Gamma(x, .) on the graph, per unit dyhat."""
        eta = self.boundary_point(yhat)
        G = kn.grad_gamma_h_values(self.spec, np.asarray(x, float), eta, side="second")
        nrm = -frame_derivatives(self.spec, self.dom, eta)
        nrm[..., 0] += 1.0
        return np.sum(G * nrm, axis=-1)

    def boundary_curved_kernel(self, xhat, yhat) -> np.ndarray:
        return self.curved_kernel(self.boundary_point(xhat), yhat)

    def remainder_kernel(self, xhat, yhat) -> np.ndarray:
        """R(xhat, yhat) = k_Omega - k, the part the flat operator misses."""
        return self.boundary_curved_kernel(xhat, yhat) - kn.boundary_kernel_values(
            self.spec, xhat, yhat)


def flatten_graph(spec: GroupSpec, dom: GraphDomain, n_check: int = 200,
                  seed: int = 0) -> Flattening:
    """Validate the graph data and return the flattening map."""
    z = np.zeros(spec.plane_dim)
    if abs(float(dom.w(z))) > 1e-12 or np.max(np.abs(dom.gradient(z))) > 1e-8:
        raise DomainError("need w(0) = 0 and grad w(0) = 0")
    rng = np.random.default_rng(seed)
    p = rng.uniform(-1, 1, (n_check, spec.plane_dim)) * 1e-2
    ratio = np.abs(dom.w(p)) / np.sum(p * p, axis=-1)
    if np.max(ratio) > 1e4:
        raise DomainError("w is not O(|s|^2) near 0")
    return Flattening(spec, dom)


def assemble_K_graph(spec: GroupSpec, flat: Flattening, mesh: PanelMesh,
                     near: NearField | None = None, level: float = 1e-8,
                     op: BoundaryOperator | None = None) -> BoundaryOperator:
    """Remainder K_Omega - K with K_Omega from one-sided limits of the corrected rule.

    Away from the tangency point the curved kernel has an even part of the
    same order as k in plane coordinates (the graph shears the vertical
    coordinate of b^{-1} o eta by a multiple of the horizontal offset), so
    lattice sums with a zero diagonal do not converge there.  Row i of
    K_Omega is instead D(.)(b_i o level e_1) - e_i/2, which takes the
    principal value in the chart centred at the graph point b_i.  Rows whose
    near field leaves the patch fall back to the zero-diagonal sum.
    """
    near = near or NearField()
    op = op or assemble_K(spec, mesh)
    N = mesh.size
    M = np.empty((N, N))
    kern = flat.curved_kernel
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(N):
            foot = mesh.nodes[i]
            if _interior_ok(spec, mesh, foot, near.cutoff_radius * mesh.h):
                x = flat.point_above(foot, level)
                row = _corrected_row(spec, mesh, kern, x, foot, level, near, flat.chart(foot))
                row[i] -= 0.5
            else:
                row = flat.boundary_curved_kernel(foot, mesh.nodes) * mesh.weights
                row[i] = 0.0
            M[i] = row
    M -= op.matrix
    return BoundaryOperator(M, mesh, "K_remainder",
                            {"diagonal": f"one-sided limit at level {level:g} minus 1/2",
                             "edge_rows": "zero diagonal"})


def assemble_K_remainder(spec: GroupSpec, flat: Flattening, mesh: PanelMesh) -> BoundaryOperator:
    """Mesh matrix of the remainder kernel, zero diagonal (see assemble_K_graph)."""
    N = mesh.size
    M = np.empty((N, N))
    nodes = mesh.nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, N, 256):
            M[s:s + 256] = flat.remainder_kernel(nodes[s:s + 256, None, :],
                                                 nodes[None, :, :]) * mesh.weights
    np.fill_diagonal(M, 0.0)
    return BoundaryOperator(M, mesh, "K_remainder", {"diagonal": "zero"})


# --------------------------------------------------------------------------
# Poisson solve
# --------------------------------------------------------------------------


@dataclass
class SolveReport:
    phi: BoundaryFunction
    info: SolveInfo
    probes: np.ndarray
    u_values: np.ndarray
    attainment_error: float
    attainment_probes: np.ndarray
    oracle_values: np.ndarray | None = None

    def rel_err(self) -> np.ndarray:
        if self.oracle_values is None:
            return np.full(len(self.u_values), np.nan)
        scale = max(np.max(np.abs(self.oracle_values)), 1e-300)
        return np.abs(self.u_values - self.oracle_values) / scale


def potential(spec: GroupSpec, mesh: PanelMesh, phi, x, flat: Flattening | None = None,
              near: NearField | None = None, rule: str = "auto") -> float:
    """Double layer of phi at the group point x (flat or graph boundary).

    ``rule="corrected"`` forces the near-field rule even where its fit
    ball leaves the patch, instead of refusing close to the edge.
    """
    if flat is None:
        return eval_double_layer(spec, mesh, phi, x, rule, near)
    vals = _values(phi, mesh)
    near = near or NearField()
    x = np.asarray(x, float)
    foot, s1 = flat.foot_of(x)
    if s1 <= 0:
        raise NearBoundaryError("point not inside the graph domain")
    kern = flat.curved_kernel
    if s1 < 8 * mesh.h and (rule == "corrected" or
                            _interior_ok(spec, mesh, foot, near.cutoff_radius * mesh.h)):
        return _corrected_sum(spec, mesh, vals, kern, x, foot, s1, near, flat.chart(foot))
    if s1 < mesh.h ** 2:
        raise NearBoundaryError("x within h^2 of the graph near the patch edge")
    return float(np.dot(mesh.weights * kern(x, mesh.nodes), vals))


def poisson_solve(spec: GroupSpec, mesh: PanelMesh, g, eval_points,
                  dom: GraphDomain | None = None, mode: str = "direct",
                  attainment_nodes=None, attainment_level: float | None = None,
                  op: BoundaryOperator | None = None,
                  near: NearField | None = None) -> SolveReport:
    """Solve for the density and evaluate the harmonic extension.

    ``eval_points`` are group points (for a graph domain they are given in
    the flattened coordinates and mapped through the inverse flattening).
    """
    gv = _values(g, mesh)
    op = op or assemble_K(spec, mesh)
    flat = extra = None
    if dom is not None:
        flat = flatten_graph(spec, dom)
        extra = assemble_K_graph(spec, flat, mesh, near, op=op)
    phi, info = solve_density(op, gv, extra, mode)
    pts = np.atleast_2d(np.asarray(eval_points, float))
    if flat is not None:
        pts = flat.inverse(pts)
    u = np.array([potential(spec, mesh, phi, p, flat, near) for p in pts]) \
        if np.any(phi.values) else np.zeros(len(pts))
    lvl = attainment_level if attainment_level is not None else 1e-3 * mesh.patch_radius
    if attainment_nodes is None:
        near_ = near or NearField()
        rlim = min(0.3 * mesh.patch_radius,
                   mesh.patch_radius - (near_.cutoff_radius + 3) * mesh.h)
        attainment_nodes = np.nonzero(mesh.radius_of_nodes() < rlim)[0][::7]
    errs = []
    for i in attainment_nodes:
        foot = mesh.nodes[i]
        if flat is None:
            x = point_above(spec, foot, lvl)
        else:
            x = flat.point_above(foot, lvl)
        errs.append(abs(potential(spec, mesh, phi, x, flat, near) - gv[i]))
    att = float(max(errs)) if errs else 0.0
    return SolveReport(phi, info, pts, u, att, np.asarray(attainment_nodes))
