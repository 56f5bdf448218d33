"""Named compactly supported test functions on the plane.

Every function takes packed plane points (..., D) and returns (...,) values.
Radial profiles are written in terms of the fourth power of d-tilde,
|v|^4 + 16|z|^2, which is a polynomial in the coordinates, so the bumps are
smooth inside their support and C^3 across its edge.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import group_core as gc
from .group_core import GroupSpec

PlaneFunction = Callable[[np.ndarray], np.ndarray]


def _d4(spec: GroupSpec, center, p) -> tuple[np.ndarray, np.ndarray]:
    w = gc.plane_log(spec, np.asarray(center, float), np.asarray(p, float))
    mh = spec.m - 1
    v2 = np.sum(w[..., :mh] ** 2, axis=-1)
    return v2 * v2 + 16.0 * np.sum(w[..., mh:] ** 2, axis=-1), w


def bump(spec: GroupSpec, center=None, rho: float = 0.5, power: int = 4) -> PlaneFunction:
    """(1 - d~^4 / rho^4)_+^power around ``center``."""
    c = np.zeros(spec.plane_dim) if center is None else np.asarray(center, float)

    def f(p):
        d4, _ = _d4(spec, c, p)
        return np.clip(1.0 - d4 / rho ** 4, 0.0, None) ** power
    return f


def gaussian(spec: GroupSpec, center=None, sigma: float = 0.25, rho: float = 0.5) -> PlaneFunction:
    """exp(-d~^4 / sigma^4) times a bump of radius rho (keeps compact support)."""
    c = np.zeros(spec.plane_dim) if center is None else np.asarray(center, float)
    cut = bump(spec, c, rho)

    def f(p):
        d4, _ = _d4(spec, c, p)
        return np.exp(-d4 / sigma ** 4) * cut(p)
    return f


def poly_bump(spec: GroupSpec, coeffs, center=None, rho: float = 0.5) -> PlaneFunction:
    """(a + b.vhat + d.z + c |vhat|^2) times a bump, Log coordinates about ``center``.

    ``coeffs`` is (a, b, d, c) with b of length m-1 and d of length n.
    """
    a, b, d, cc = coeffs
    b = np.broadcast_to(np.asarray(b, float), (spec.m - 1,))
    d = np.broadcast_to(np.asarray(d, float), (spec.n,))
    c = np.zeros(spec.plane_dim) if center is None else np.asarray(center, float)
    cut = bump(spec, c, rho)
    mh = spec.m - 1

    def f(p):
        _, w = _d4(spec, c, p)
        vh, z = w[..., :mh], w[..., mh:]
        return (a + vh @ b + z @ d + cc * np.sum(vh * vh, axis=-1)) * cut(p)
    return f


def symmetric_bump(spec: GroupSpec, rho: float = 0.5, z0: float = 0.0) -> PlaneFunction:
    """Bump centred on the reflection axis, invariant under vhat -> -vhat."""
    c = np.zeros(spec.plane_dim)
    c[spec.m - 1] = z0
    return bump(spec, c, rho)


def reflect_plane(spec: GroupSpec, p) -> np.ndarray:
    """The reflection vhat -> -vhat, t fixed."""
    q = np.array(p, dtype=float)
    q[..., : spec.m - 1] *= -1.0
    return q


def named(spec: GroupSpec, name: str, **params) -> PlaneFunction:
    """Look up a density by name: bump, gaussian, polybump, symbump, zero."""
    if name == "zero":
        return lambda p: np.zeros(np.shape(p)[:-1])
    if name == "bump":
        return bump(spec, params.get("center"), params.get("rho", 0.5))
    if name == "gaussian":
        return gaussian(spec, params.get("center"), params.get("sigma", 0.25),
                        params.get("rho", 0.5))
    if name == "polybump":
        coeffs = params.get("coeffs", (1.0, 0.5, 2.0, 1.0))
        return poly_bump(spec, coeffs, params.get("center"), params.get("rho", 0.5))
    if name == "symbump":
        return symmetric_bump(spec, params.get("rho", 0.5), params.get("z0", 0.0))
    raise ValueError(f"unknown density {name!r}")


def holder_suite(spec: GroupSpec, rho: float = 0.4) -> list[tuple[str, PlaneFunction]]:
    """Twenty compactly supported smooth functions inside d~ < 1.5 rho."""
    D = spec.plane_dim
    mh = spec.m - 1

    def at(v=0.0, z=0.0):
        c = np.zeros(D)
        c[0] = v
        c[mh] = z
        return c

    out = []
    for r in (rho, 0.8 * rho, 0.6 * rho):
        out.append((f"bump_r{r:.3g}", bump(spec, None, r)))
    out.append(("bump_shift_v", bump(spec, at(0.15 * rho / 0.4), 0.7 * rho)))
    out.append(("bump_shift_z", bump(spec, at(0.0, 0.01), 0.7 * rho)))
    out.append(("bump_shift_vz", bump(spec, at(-0.1, -0.008), 0.6 * rho)))
    out.append(("bump_p3", bump(spec, None, rho, power=3)))
    for s in (0.5, 0.35):
        out.append((f"gauss_s{s}", gaussian(spec, None, s * rho, rho)))
    polys = [
        ("v_bump", (0.0, 1.0, 0.0, 0.0)),
        ("z_bump", (0.0, 0.0, 1.0, 0.0)),
        ("v2_bump", (0.0, 0.0, 0.0, 1.0)),
        ("mixed_bump", (1.0, 0.5, -3.0, 2.0)),
        ("tilt_bump", (0.5, -1.0, 4.0, 0.0)),
    ]
    for name, co in polys:
        out.append((name, poly_bump(spec, co, None, rho)))
    out.append(("symbump", symmetric_bump(spec, rho)))
    out.append(("symbump_z", symmetric_bump(spec, 0.8 * rho, 0.005)))
    cut = bump(spec, None, rho)

    def wave(p, cut=cut):
        return np.cos(6.0 * p[..., 0]) * np.cos(40.0 * p[..., mh]) * cut(p)
    out.append(("wave_bump", wave))

    def twobump(p):
        return bump(spec, at(0.12), 0.5 * rho)(p) - 0.7 * bump(spec, at(-0.12), 0.5 * rho)(p)
    out.append(("two_bumps", twobump))

    def sq(p, cut=cut):
        return cut(p) ** 2
    out.append(("bump_sq", sq))

    def shear(p, cut=cut):
        return (p[..., 0] * p[..., mh] * 20.0 + 1.0) * cut(p)
    out.append(("shear_bump", shear))
    assert len(out) == 20
    return out
