"""Experiment drivers shared by the CLI and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fd_oracle as fd
from . import layer_ops as lo
from .group_core import GroupSpec
from .plane_mesh import PanelMesh


@dataclass
class CrossCheck:
    report: lo.SolveReport
    fd: fd.FDSolution
    probes: np.ndarray
    u_layer: np.ndarray
    u_fd: np.ndarray

    @property
    def rel_linf(self) -> float:
        return float(np.max(np.abs(self.u_layer - self.u_fd)) /
                     max(np.max(np.abs(self.u_fd)), 1e-300))


def default_box(spec: GroupSpec):
    """Box [0, 0.3] x [-0.4, 0.4]^(m-1) x [-0.08, 0.08]^n in (flattened) coordinates."""
    lo_ = np.array([0.0] + [-0.4] * (spec.m - 1) + [-0.08] * spec.n)
    hi_ = np.array([0.3] + [0.4] * (spec.m - 1) + [0.08] * spec.n)
    return lo_, hi_


def probe_points(spec: GroupSpec, lo_, hi_, margin: float = 0.2, per_axis: int = 3,
                 x1_min: float = 0.06):
    """Interior probes at least ``margin`` (fraction of box size) from the lateral faces."""
    axes = []
    for a in range(spec.dim):
        size = hi_[a] - lo_[a]
        if a == 0:
            axes.append(np.linspace(max(x1_min, lo_[0] + margin * size),
                                    hi_[0] - margin * size, per_axis))
        else:
            axes.append(np.linspace(lo_[a] + margin * size, hi_[a] - margin * size, per_axis))
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, spec.dim)


def _face_value(spec, mesh, phi, x, flat):
    try:
        return lo.potential(spec, mesh, phi, x, flat)
    except lo.NearBoundaryError:
        # close to the plane near the patch edge: the corrected rule still
        # has enough nodes for its fit, the direct sum does not
        return lo.potential(spec, mesh, phi, x, flat, rule="corrected")


def poisson_crosscheck(spec: GroupSpec, mesh: PanelMesh, g, dom=None, hx: float = 0.0125,
                       ht: float = 0.0032, box=None, probes=None,
                       op: lo.BoundaryOperator | None = None, mode: str = "direct",
                       richardson: bool = True) -> CrossCheck:
    """Layer-potential solution vs. an FD Dirichlet solve on a box.

    The bottom face carries g; the remaining faces carry the layer potential
    (the half-space problem has no other boundary).  Coordinates are the
    flattened ones when ``dom`` is given.  With ``richardson`` the FD values
    are extrapolated from the grid and its every-other-point subgrid, which
    removes the O(hx^2 + ht^2) truncation term.
    """
    lo_, hi_ = box if box is not None else default_box(spec)
    probes = probe_points(spec, lo_, hi_) if probes is None else np.asarray(probes, float)
    if not callable(g):
        raise ValueError("poisson_crosscheck needs g as a callable")
    rep = lo.poisson_solve(spec, mesh, g, probes, dom=dom, mode=mode, op=op)
    flat = lo.flatten_graph(spec, dom) if dom is not None else None
    grid = fd.GridSpec.box(spec, lo_, hi_, hx, ht)
    pts = grid.points()
    mask = grid.interior_mask()
    bvals = np.zeros(grid.shape)
    bottom = np.zeros(grid.shape, bool)
    bottom[0] = True
    bvals[bottom] = g(pts[bottom][:, 1:])
    others = (~mask) & (~bottom)
    if richardson:
        # the coarse grid shares the box, so its faces are a subset of these
        coarse = fd.GridSpec(grid.lo, grid.hi, tuple((n - 1) // 2 + 1 for n in grid.shape))
        if any(2 * (c - 1) != n - 1 for c, n in zip(coarse.shape, grid.shape)):
            raise ValueError("richardson needs an even number of cells per axis")
    phys = pts[others] if flat is None else flat.inverse(pts[others])
    bvals[others] = [_face_value(spec, mesh, rep.phi, p, flat) for p in phys]
    coeffs = fd.flattened_coefficients(spec, flat) if flat is not None else None
    sol = fd.fd_dirichlet_solve(spec, grid, 0.0, np.where(mask, 0.0, bvals), coeffs)
    u_fd = fd.interpolate(sol, probes)
    if richardson:
        cb = bvals[tuple(slice(None, None, 2) for _ in grid.shape)]
        csol = fd.fd_dirichlet_solve(spec, coarse, 0.0, cb, coeffs)
        u_fd = (4.0 * u_fd - fd.interpolate(csol, probes)) / 3.0
    return CrossCheck(rep, sol, probes, rep.u_values, u_fd)
