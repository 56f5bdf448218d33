"""Quadrature building blocks shared by the kernel, mesh and operator code.

Homogeneous polar coordinates: a point of R^{a} x R^{c} (a "horizontal", c
"vertical" coordinates) is written as delta_s(omega) with

    x = s cos(theta)^{1/2} w_a,     t = (s^2 / 4) sin(theta) w_c,

w_a, w_c unit vectors and theta in [0, pi/2].  Then

    dx dt = s^{q-1} ds dmu(omega),   q = a + 2c,
    dmu = cos(theta)^{(a-2)/2} sin(theta)^{c-1} 4^{-c} dtheta dw_a dw_c.

The theta integral is taken through theta = pi/2 - u^2 which removes the
cos^{-1/2} end-point singularity that appears for a = 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=64)
def sphere_rule(d: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on S^{d-1}: nodes (N, d) and weights summing to |S^{d-1}|.

    Exact for polynomials of degree < 2*order restricted to the sphere.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        k = 2 * order
        ang = (np.arange(k) + 0.5) * (2 * np.pi / k)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(k, 2 * np.pi / k)
    a = 0.5 * (d - 3)
    u, wu = roots_jacobi(order, a, a)
    sub, wsub = sphere_rule(d - 1, order)
    r = np.sqrt(1.0 - u * u)
    nodes = np.concatenate(
        [np.repeat(u, len(sub))[:, None], (r[:, None, None] * sub[None]).reshape(-1, d - 1)],
        axis=1)
    weights = (wu[:, None] * wsub[None]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class PolarRule:
    """Nodes omega on the unit gauge sphere of R^a x R^c with weights dmu."""

    a: int
    c: int
    omega: np.ndarray      # (M, a + c)
    weights: np.ndarray    # (M,)
    cos_theta: np.ndarray  # (M,) |x|^2 at s = 1

    @property
    def q(self) -> int:
        return self.a + 2 * self.c

    def points(self, s) -> np.ndarray:
        """delta_s(omega) for scalar or array s (broadcast on a new leading axis)."""
        s = np.asarray(s, dtype=float)
        om = self.omega
        sx = s[..., None, None] if s.ndim else s
        out = np.empty(np.shape(s) + om.shape)
        out[..., : self.a] = sx * om[:, : self.a]
        out[..., self.a:] = sx * sx * om[:, self.a:]
        return out


@lru_cache(maxsize=64)
def polar_rule(a: int, c: int, n_theta: int = 24, sphere_order: int = 6) -> PolarRule:
    u, wu = roots_legendre(n_theta)
    umax = np.sqrt(np.pi / 2)
    u = 0.5 * umax * (u + 1.0)
    wu = 0.5 * umax * wu
    theta = np.pi / 2 - u * u
    ct = np.sin(u * u)           # cos(theta), accurate near theta = pi/2
    st = np.cos(u * u)           # sin(theta)
    # dtheta = 2u du; combine with cos^{(a-2)/2}, written stably for a = 1
    if a == 1:
        dens = 2.0 * np.where(u > 0, u / np.sqrt(np.maximum(ct, 1e-300)), 1.0)
    else:
        dens = 2.0 * u * ct ** (0.5 * (a - 2))
    dens = dens * st ** (c - 1) * 4.0 ** (-c) * wu
    del theta
    na, wa = sphere_rule(a, sphere_order)
    nc, wc = sphere_rule(c, sphere_order)
    T, IA, IC = np.meshgrid(np.arange(n_theta), np.arange(len(na)), np.arange(len(nc)),
                            indexing="ij")
    T, IA, IC = T.ravel(), IA.ravel(), IC.ravel()
    omega = np.concatenate([np.sqrt(ct[T])[:, None] * na[IA], 0.25 * st[T][:, None] * nc[IC]],
                           axis=1)
    weights = dens[T] * wa[IA] * wc[IC]
    return PolarRule(a, c, omega, weights, ct[T])


def graded_radial_rule(s_min_scale: float, s_max: float, order: int = 8,
                       ratio: float = 2.0, n_inner: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre panels on [0, s_max] graded geometrically towards 0.

    The innermost panel is [0, s_min_scale * ratio**-n_inner]; the rest grow by
    ``ratio`` so that features at scale ``s_min_scale`` are resolved.
    """
    if s_max <= 0:
        return np.zeros(0), np.zeros(0)
    x, w = roots_legendre(order)
    edges = [0.0]
    e = min(s_min_scale * ratio ** (-n_inner), s_max)
    while e < s_max:
        edges.append(e)
        e *= ratio
    edges.append(s_max)
    edges = np.array(edges)
    lo, hi = edges[:-1], edges[1:]
    nodes = (0.5 * (hi - lo)[:, None] * (x[None] + 1.0) + lo[:, None]).ravel()
    weights = (0.5 * (hi - lo)[:, None] * w[None]).ravel()
    return nodes, weights
