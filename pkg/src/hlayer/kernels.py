"""Fundamental solution, double-layer kernels and the C_Q calibration.

With (v, z) = eta^{-1} o xi and N = |v|^4 + 16|z|^2 the fundamental solution is
Gamma(xi, eta) = C_Q N^{(2-Q)/4}, and

    X_j Gamma_hat(v, z) = C_Q (2-Q) (|v|^2 v_j + 4 sum_{k,i} a^k_{ji} v_i z_k) / N^{(Q+2)/4}.

Evaluating the derivative in the second variable on {y_1 = 0} splits it into
k_1 (the |v|^2 x_1 part) and k (the mixed part).  All formulas below are
derived from this single gradient so that k_1 + k reproduces X_1^eta Gamma to
rounding error.

Functions with a ``_values`` suffix take packed arrays and broadcast; the
others take single points and return :class:`KernelEval`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import group_core as gc
from ._quad import polar_rule
from .group_core import GroupSpec

POLE_GUARD = 1e-13


class SingularEvaluation(ValueError):
    """Kernel evaluated at (or numerically at) its singularity."""


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelEval:
    value: float
    regularity_class: str
    pole_distance: float


def _guard(dist) -> None:
    if np.any(np.asarray(dist) < POLE_GUARD):
        raise SingularEvaluation(
            f"kernel evaluated at pole distance {float(np.min(dist)):.3g}")


def _wrap(value, dist) -> KernelEval:
    value = float(np.asarray(value))
    dist = float(np.asarray(dist))
    return KernelEval(value, "smooth" if dist > 0 else "singular_at_coincidence", dist)


# --------------------------------------------------------------------------
# Gamma and its horizontal gradient
# --------------------------------------------------------------------------


def _n_of(spec: GroupSpec, w: np.ndarray) -> np.ndarray:
    m = spec.m
    v2 = np.sum(w[..., :m] ** 2, axis=-1)
    return v2 * v2 + 16.0 * np.sum(w[..., m:] ** 2, axis=-1)


def gamma_hat_values(spec: GroupSpec, w, c_q: float | None = None) -> np.ndarray:
    c = spec.require_cq() if c_q is None else c_q
    N = _n_of(spec, np.asarray(w, dtype=float))
    return c * N ** ((2.0 - spec.Q) / 4.0)


def grad_hat_values(spec: GroupSpec, w, c_q: float | None = None) -> np.ndarray:
    """(X_1..X_m) Gamma_hat at packed points w, shape (..., m)."""
    c = spec.require_cq() if c_q is None else c_q
    w = np.asarray(w, dtype=float)
    m = spec.m
    v, z = w[..., :m], w[..., m:]
    N = _n_of(spec, w)
    v2 = np.sum(v * v, axis=-1)
    mixed = np.einsum("kji,...i,...k->...j", spec.A, v, z)
    num = v2[..., None] * v + 4.0 * mixed
    return c * (2.0 - spec.Q) * num / N[..., None] ** ((spec.Q + 2.0) / 4.0)


def gamma_values(spec: GroupSpec, xi, eta) -> np.ndarray:
    w = gc.mul(spec, -np.asarray(eta, float), np.asarray(xi, float))
    return gamma_hat_values(spec, w)


def gamma(spec: GroupSpec, xi, eta) -> KernelEval:
    """Gamma(xi, eta) = C_Q d(xi, eta)^{2-Q}."""
    spec.require_cq()
    d = gc.gauge_distance(spec, xi, eta)
    _guard(d)
    return _wrap(spec.c_q * d ** (2.0 - spec.Q), d)


def grad_gamma_h_values(spec: GroupSpec, xi, eta, side: str = "first") -> np.ndarray:
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    if side == "first":
        w = gc.mul(spec, -eta, xi)
    elif side == "second":
        w = gc.mul(spec, -xi, eta)
    else:
        raise ValueError("side must be 'first' or 'second'")
    return grad_hat_values(spec, w)


def grad_gamma_h(spec: GroupSpec, xi, eta, side: str = "first") -> np.ndarray:
    """Horizontal gradient of Gamma in the first or the second variable."""
    spec.require_cq()
    xi = gc._pack(spec, xi)
    eta = gc._pack(spec, eta)
    _guard(gc.gauge_distance(spec, xi, eta))
    return grad_gamma_h_values(spec, xi, eta, side)


def gauge_grad_values(spec: GroupSpec, w) -> np.ndarray:
    """(X_1..X_m) |w| for packed w."""
    w = np.asarray(w, dtype=float)
    m = spec.m
    x, t = w[..., :m], w[..., m:]
    N = _n_of(spec, w)
    xN = 4.0 * np.sum(x * x, axis=-1)[..., None] * x + 16.0 * np.einsum(
        "kji,...i,...k->...j", spec.A, x, t)
    return xN / (4.0 * N[..., None] ** 0.75)


# --------------------------------------------------------------------------
# Flux normalisation and calibration
# --------------------------------------------------------------------------


def flux_integral(spec: GroupSpec, r: float = 1.0, c_q: float | None = None,
                  n_theta: int = 24, sphere_order: int = 6) -> float:
    """Quadrature of the flux of grad_G Gamma(0, .) through the gauge sphere of radius r.

    The normal points towards the pole, which makes the flux of the positive
    fundamental solution equal to +1.  In homogeneous polar coordinates the
    surface element satisfies n dS = grad|.| r^{Q-1} dmu, so the integrand is
    sum_j X_j Gamma X_j|.| evaluated at delta_r(omega).
    """
    rule = polar_rule(spec.m, spec.n, n_theta, sphere_order)
    pts = rule.points(r)
    c = spec.c_q if c_q is None else c_q
    g = grad_gamma_h_values(spec.with_cq(c), np.zeros(spec.dim), pts, side="second")
    gr = gauge_grad_values(spec, pts)
    integrand = -np.sum(g * gr, axis=-1)
    return float(r ** (spec.Q - 1) * np.sum(rule.weights * integrand))


def calibrate_cq(spec: GroupSpec, n_theta: int = 24, sphere_order: int = 6,
                 tol: float = 1e-12) -> float:
    """Constant C_Q for which the quadratured unit-sphere flux equals 1."""
    f1 = flux_integral(spec, 1.0, 1.0, n_theta, sphere_order)
    f2 = flux_integral(spec, 1.0, 1.0, 2 * n_theta, sphere_order + 2)
    resid = abs(f1 - f2) / abs(f2)
    if not np.isfinite(f2) or f2 <= 0 or resid > tol:
        raise CalibrationError(f"flux quadrature not converged (relative change {resid:.3g})")
    return 1.0 / f2


def calibrated(spec: GroupSpec) -> GroupSpec:
    return spec if spec.calibrated else spec.with_cq(calibrate_cq(spec))


# --------------------------------------------------------------------------
# Double-layer kernels on the plane {y_1 = 0}
# --------------------------------------------------------------------------


def _split(spec: GroupSpec, xi, eta_hat):
    """Log coordinates (v, z) of xi relative to eta = (0, eta_hat)."""
    xi = np.asarray(xi, float)
    eta = gc.embed_plane(spec, np.asarray(eta_hat, float), 0.0)
    w = gc.mul(spec, -eta, xi)
    return w[..., : spec.m], w[..., spec.m:]


def layer_kernels_from_log(spec: GroupSpec, x1, vhat, z, c_q: float | None = None):
    """(k_1, k) as functions of (x_1, vhat, z) where (v, z) = Log_eta(xi), v_1 = x_1."""
    c = spec.require_cq() if c_q is None else c_q
    x1 = np.asarray(x1, float)
    vhat = np.asarray(vhat, float)
    z = np.asarray(z, float)
    s = x1 * x1 + np.sum(vhat * vhat, axis=-1)
    N = s * s + 16.0 * np.sum(z * z, axis=-1)
    den = N ** ((spec.Q + 2.0) / 4.0)
    pref = c * (spec.Q - 2.0)
    k1 = pref * s * x1 / den
    # X_1^eta Gamma(xi, eta) = (X_1 Gamma_hat)(xi^{-1} o eta) and xi^{-1} o eta = -(v, z)
    mixed = np.einsum("ki,...i,...k->...", spec.a1[:, 1:], vhat, z)
    k = -pref * 4.0 * mixed / den
    return k1, k


def kernel_k1k_values(spec: GroupSpec, xi, eta_hat):
    v, z = _split(spec, xi, eta_hat)
    return layer_kernels_from_log(spec, v[..., 0], v[..., 1:], z)


def _plane_guard(spec, xi, eta_hat):
    spec.require_cq()
    xi = gc._pack(spec, xi)
    lvl = eta_hat.level if isinstance(eta_hat, gc.PlanePoint) else 0.0
    if lvl != 0.0:
        raise ValueError("eta_hat must lie on the level-0 plane")
    eh = gc._pack_plane(spec, eta_hat)
    if abs(xi[0]) == 0.0:
        raise SingularEvaluation("xi lies on the plane; use the boundary kernel")
    d = gc.gauge_distance(spec, xi, gc.embed_plane(spec, eh))
    _guard(d)
    return xi, eh, d


def kernel_k1(spec: GroupSpec, xi, eta_hat) -> KernelEval:
    xi, eh, d = _plane_guard(spec, xi, eta_hat)
    return _wrap(kernel_k1k_values(spec, xi, eh)[0], d)


def kernel_k(spec: GroupSpec, xi, eta_hat) -> KernelEval:
    xi, eh, d = _plane_guard(spec, xi, eta_hat)
    return _wrap(kernel_k1k_values(spec, xi, eh)[1], d)


def boundary_kernel_from_log(spec: GroupSpec, w, c_q: float | None = None) -> np.ndarray:
    """Limit kernel k(vhat, z) on packed within-plane coordinates w."""
    c = spec.require_cq() if c_q is None else c_q
    w = np.asarray(w, float)
    mh = spec.m - 1
    vh, z = w[..., :mh], w[..., mh:]
    s = np.sum(vh * vh, axis=-1)
    N = s * s + 16.0 * np.sum(z * z, axis=-1)
    mixed = np.einsum("ki,...i,...k->...", spec.a1[:, 1:], vh, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -c * (spec.Q - 2.0) * 4.0 * mixed / N ** ((spec.Q + 2.0) / 4.0)


def boundary_kernel_values(spec: GroupSpec, xi_hat, eta_hat) -> np.ndarray:
    return boundary_kernel_from_log(spec, gc.plane_log(spec, eta_hat, xi_hat))


def boundary_kernel(spec: GroupSpec, xi_hat, eta_hat) -> KernelEval:
    spec.require_cq()
    for p in (xi_hat, eta_hat):
        if isinstance(p, gc.PlanePoint) and p.level != 0.0:
            raise ValueError("boundary kernel is defined on the level-0 plane")
    w = gc.plane_log(spec, eta_hat, xi_hat)
    d = gc.plane_gauge(spec, w)
    _guard(d)
    return _wrap(boundary_kernel_from_log(spec, w), d)


def ell_values(w) -> np.ndarray:
    """Antiderivative l(v) on H^1 with d/dy_3 [l(xhat - yhat)] = k(xhat - yhat)."""
    w = np.asarray(w, float)
    v2, v3 = w[..., 0], w[..., 1]
    return (1.0 / (4.0 * np.pi)) * v2 / np.sqrt(v2 ** 4 + 16.0 * v3 ** 2)


def kernel_ell(xi_hat, eta_hat) -> KernelEval:
    """H^1 only.  Sign chosen so that the y_3-derivative reproduces the boundary kernel."""
    a = xi_hat.packed() if isinstance(xi_hat, gc.PlanePoint) else np.asarray(xi_hat, float)
    b = eta_hat.packed() if isinstance(eta_hat, gc.PlanePoint) else np.asarray(eta_hat, float)
    if a.shape[-1] != 2 or b.shape[-1] != 2:
        raise ValueError("kernel_ell is defined on the H^1 plane only")
    w = a - b
    d = (w[0] ** 4 + 16 * w[1] ** 2) ** 0.25
    _guard(d)
    return _wrap(ell_values(w), d)


def tilde_from_log(spec: GroupSpec, x1, vhat, z, c_q: float | None = None):
    """Decoupled kernels: the mixed x_1-t shift is dropped from (v, z)."""
    return layer_kernels_from_log(spec, x1, vhat, z, c_q)


def tilde_kernels_values(spec: GroupSpec, xi, eta_hat):
    xi = np.asarray(xi, float)
    w = gc.plane_log(spec, eta_hat, xi[..., 1:])
    mh = spec.m - 1
    return tilde_from_log(spec, xi[..., 0], w[..., :mh], w[..., mh:])


def tilde_kernels(spec: GroupSpec, xi, eta_hat) -> tuple[KernelEval, KernelEval]:
    xi, eh, d = _plane_guard(spec, xi, eta_hat)
    k1, k = tilde_kernels_values(spec, xi, eh)
    return _wrap(k1, d), _wrap(k, d)
