"""Discrete anisotropic Hoelder norms on the plane.

Two estimators of the same regularity class:

* ``c2alpha_*``: sup norms of f, X^_i f, X^_i X^_j f, d_t f plus d~-Hoelder
  seminorms of the top-order derivatives (finite differences along the
  exp(h X^_i) flows and the vertical directions);
* ``gamma2alpha_estimate``: least-squares fits of the anisotropic degree-2
  polynomial a + b.vhat + vhat^T C vhat + d.z on d~-balls, scored by
  residual / delta^{2+alpha} plus the size of the fitted coefficients.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import group_core as gc
from .group_core import GroupSpec
from .plane_mesh import PanelMesh, plane_exp


@dataclass
class NormReport:
    sup_norm: float = 0.0
    grad_sup: float = 0.0
    second_sup: float = 0.0
    vertical_sup: float = 0.0
    alpha_seminorms: dict = field(default_factory=dict)
    gamma_norm: float = np.nan
    fit_polynomials: list = field(default_factory=list)

    @property
    def norm(self) -> float:
        """C^{2,alpha} norm: the sups plus the top-order seminorms."""
        return (self.sup_norm + self.grad_sup + self.second_sup + self.vertical_sup
                + sum(self.alpha_seminorms.values()))


# --------------------------------------------------------------------------
# Hoelder seminorm over sampled pairs
# --------------------------------------------------------------------------


def _pairs(points_scaled: np.ndarray, max_pairs: int, seed: int, k_near: int = 12):
    """Near-neighbour pairs plus a scrambled-Sobol sample of global pairs."""
    n = len(points_scaled)
    if n * (n - 1) // 2 <= max_pairs:
        i, j = np.triu_indices(n, 1)
        return i, j
    tree = cKDTree(points_scaled)
    k = min(k_near + 1, n)
    _, nb = tree.query(points_scaled, k)
    i_near = np.repeat(np.arange(n), k - 1)
    j_near = nb[:, 1:].ravel()
    rest = max(max_pairs - len(i_near), 0)
    mexp = int(np.ceil(np.log2(max(rest, 2))))
    sob = qmc.Sobol(2, scramble=True, seed=seed).random_base2(mexp)[:rest]
    ii = (sob[:, 0] * n).astype(int)
    jj = (sob[:, 1] * n).astype(int)
    i = np.concatenate([i_near, ii])
    j = np.concatenate([j_near, jj])
    keep = i != j
    return i[keep], j[keep]


def holder_alpha(values, points, metric, alpha: float, max_pairs: int = 100_000,
                 seed: int = 0, scale=None) -> float:
    """max |f(p) - f(q)| / metric(p, q)^alpha over sampled pairs.

    ``metric(P, Q)`` acts on stacked packed points.  ``scale`` (per coordinate)
    is used only for the near-neighbour search; by default coordinate ranges.
    """
    values = np.asarray(values, float)
    points = np.asarray(points, float)
    if len(values) < 2:
        raise ValueError("need at least two samples")
    sc = np.ptp(points, axis=0) if scale is None else np.asarray(scale, float)
    sc = np.where(sc > 0, sc, 1.0)
    i, j = _pairs(points / sc, max_pairs, seed)
    d = metric(points[i], points[j])
    ok = d > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(values[i[ok]] - values[j[ok]]) / d[ok] ** alpha))


def tilde_metric(spec: GroupSpec):
    return lambda P, Q: gc.plane_gauge(spec, gc.plane_log(spec, Q, P))


# --------------------------------------------------------------------------
# C^{2,alpha} by finite differences
# --------------------------------------------------------------------------


def _labels(spec: GroupSpec):
    mh = spec.m - 1
    second = [(i, j) for i in range(mh) for j in range(i, mh)]
    return mh, second


def _report_from_derivs(spec, pts, f0, d1, d2, dt, alpha, max_pairs, seed):
    mh, second = _labels(spec)
    rep = NormReport(
        sup_norm=float(np.max(np.abs(f0))),
        grad_sup=float(np.max(np.abs(d1))) if d1.size else 0.0,
        second_sup=float(np.max(np.abs(d2))) if d2.size else 0.0,
        vertical_sup=float(np.max(np.abs(dt))) if dt.size else 0.0,
    )
    met = tilde_metric(spec)
    sc = np.array([1.0] * mh + [0.25] * spec.n)
    for a, (i, j) in enumerate(second):
        rep.alpha_seminorms[f"X{i + 2}X{j + 2}"] = holder_alpha(
            d2[:, a], pts, met, alpha, max_pairs, seed, sc)
    for k in range(spec.n):
        rep.alpha_seminorms[f"T{k + 1}"] = holder_alpha(dt[:, k], pts, met, alpha,
                                                        max_pairs, seed, sc)
    return rep


def c2alpha_estimate(spec: GroupSpec, f, mesh: PanelMesh, alpha: float = 0.5,
                     fd_step: float | None = None, radius: float | None = None,
                     max_pairs: int = 100_000, seed: int = 0) -> NormReport:
    """C^{2,alpha} estimate of a callable f on the plane, sampled at mesh nodes.

    Horizontal derivatives use p o (+-h e_i) (the flows of the left invariant
    plane fields), vertical ones p +- h^2 e_t.  Symmetric second differences
    are second-order accurate in ``fd_step`` (default h/4).
    """
    h = mesh.h / 4 if fd_step is None else fd_step
    ht = h * h
    mh, second = _labels(spec)
    sel = mesh.radius_of_nodes() < (mesh.patch_radius if radius is None else radius)
    P = mesh.nodes[sel]
    D = spec.plane_dim

    def shift(p, i, s):
        e = np.zeros(D)
        e[i] = s
        return plane_exp(spec, p, e)
    f0 = f(P)
    d1 = np.stack([(f(shift(P, i, h)) - f(shift(P, i, -h))) / (2 * h) for i in range(mh)], -1)
    d2 = []
    for i, j in second:
        if i == j:
            d2.append((f(shift(P, i, h)) - 2 * f0 + f(shift(P, i, -h))) / h ** 2)
        else:
            pp = f(shift(shift(P, i, h), j, h))
            pm_ = f(shift(shift(P, i, h), j, -h))
            mp = f(shift(shift(P, i, -h), j, h))
            mm = f(shift(shift(P, i, -h), j, -h))
            d2.append((pp - pm_ - mp + mm) / (4 * h * h))
    d2 = np.stack(d2, -1)
    dt = []
    for k in range(spec.n):
        e = np.zeros(D)
        e[mh + k] = ht
        dt.append((f(P + e) - f(P - e)) / (2 * ht))
    dt = np.stack(dt, -1)
    return _report_from_derivs(spec, P, f0, d1, d2, dt, alpha, max_pairs, seed)


def c2alpha_nodes(spec: GroupSpec, mesh: PanelMesh, values, alpha: float = 0.5,
                  radius: float | None = None, max_pairs: int = 100_000,
                  seed: int = 0) -> NormReport:
    """C^{2,alpha} estimate from node values by lattice differences.

    Needs A_hat = 0 (H^1), where the lattice directions are the flows of the
    plane fields.  Only nodes whose full stencil lies on the mesh are used.
    """
    if spec.A_hat.any():
        raise ValueError("lattice differences need A_hat = 0; use c2alpha_estimate")
    values = np.asarray(values, float)
    table = mesh.lookup()
    mh, second = _labels(spec)
    D = spec.plane_dim
    rmax = mesh.patch_radius if radius is None else radius
    rad = mesh.radius_of_nodes()
    steps = [np.eye(D, dtype=int)[i] for i in range(D)]

    def nb(idx, off):
        return table.get(tuple(idx + off))
    rows = []
    for k in np.nonzero(rad < rmax)[0]:
        idx = mesh.index[k]
        offs = [s * e for e in steps for s in (1, -1)]
        offs += [e1 * a + e2 * b for (i, j) in second if i != j
                 for e1, e2 in [(steps[i], steps[j])] for a in (1, -1) for b in (1, -1)]
        if all(nb(idx, o) is not None for o in offs):
            rows.append(k)
    rows = np.array(rows)
    hx, ht = mesh.h, mesh.h ** 2
    f0 = values[rows]

    def at(off):
        return values[[table[tuple(mesh.index[k] + off)] for k in rows]]
    d1 = np.stack([(at(steps[i]) - at(-steps[i])) / (2 * hx) for i in range(mh)], -1)
    d2 = []
    for i, j in second:
        if i == j:
            d2.append((at(steps[i]) - 2 * f0 + at(-steps[i])) / hx ** 2)
        else:
            ei, ej = steps[i], steps[j]
            d2.append((at(ei + ej) - at(ei - ej) - at(ej - ei) + at(-ei - ej)) / (4 * hx * hx))
    d2 = np.stack(d2, -1)
    dt = np.stack([(at(steps[mh + k]) - at(-steps[mh + k])) / (2 * ht)
                   for k in range(spec.n)], -1)
    return _report_from_derivs(spec, mesh.nodes[rows], f0, d1, d2, dt, alpha, max_pairs, seed)


# --------------------------------------------------------------------------
# Gamma^{2,alpha} by polynomial fits
# --------------------------------------------------------------------------


def _basis(spec: GroupSpec, w):
    from .layer_ops import _poly_basis
    return _poly_basis(spec, w)


def fit_poly(spec: GroupSpec, base, nodes, values, delta: float):
    """Fit a + b.vhat + d.z + sum c_ij v_i v_j on B~(base, delta).

    Returns (coefficients, max residual, node count) or None if the fit is
    underdetermined.  Coefficients are in basis order (1, vhat, z, v_i v_j).
    """
    w = gc.plane_log(spec, base, nodes)
    sel = gc.plane_gauge(spec, w) < delta
    B = _basis(spec, w[sel])
    nb = B.shape[1]
    if sel.sum() < 2 * nb:
        return None
    mh = spec.m - 1
    deg = np.array([0] + [1] * mh + [2] * spec.n + [2] * (nb - 1 - mh - spec.n), float)
    sc = delta ** -deg
    coef, *_ = np.linalg.lstsq(B * sc, values[sel], rcond=None)
    coef = coef * sc
    res = float(np.max(np.abs(B @ coef - values[sel])))
    return coef, res, int(sel.sum())


def gamma2alpha_estimate(spec: GroupSpec, f, mesh: PanelMesh, scales, alpha: float = 0.5,
                         base_radius: float | None = None, n_base: int = 40,
                         seed: int = 0) -> NormReport:
    """Gamma^{2,alpha} estimate: max residual / delta^{2+alpha} + coefficient sups.

    The coefficient part is sup|a| + sup|b| + sup|d| + sup|C| over all fits,
    the same layout as the C^{2,alpha} norm, so both norms agree up to the
    factor 2 of X^2 (v^T C v) = 2C on polynomials.

    Base points are a deterministic sample of nodes within ``base_radius``;
    balls B~(base, delta) must lie inside the mesh.
    """
    scales = np.sort(np.asarray(scales, float))
    vals = f(mesh.nodes) if callable(f) else np.asarray(f, float)
    rad = mesh.radius_of_nodes()
    rb = base_radius if base_radius is not None else mesh.patch_radius - scales[-1] - mesh.h
    cand = np.nonzero(rad < rb)[0]
    if len(cand) == 0:
        raise ValueError("no base points inside the mesh")
    rng = np.random.default_rng(seed)
    base = cand if len(cand) <= n_base else np.sort(rng.choice(cand, n_base, replace=False))
    c0 = mesh.node_of(np.zeros(spec.plane_dim)) if np.any(rad < 1e-12) else None
    if c0 is not None and c0 not in base:
        base = np.append(base, c0)
    rep = NormReport()
    worst = 0.0
    mh = spec.m - 1
    groups = [slice(0, 1), slice(1, 1 + mh), slice(1 + mh, 1 + mh + spec.n),
              slice(1 + mh + spec.n, None)]          # a, b, d, C
    coef_sup = np.zeros(len(groups))
    for b in base:
        for dlt in scales:
            fit = fit_poly(spec, mesh.nodes[b], mesh.nodes, vals, dlt)
            if fit is None:
                warnings.warn(f"scale {dlt} skipped: too few nodes")
                continue
            coef, res, cnt = fit
            rep.fit_polynomials.append({"node": int(b), "scale": float(dlt), "residual": res,
                                        "coef": coef, "ratio": res / dlt ** (2 + alpha)})
            worst = max(worst, res / dlt ** (2 + alpha))
            coef_sup = np.maximum(coef_sup, [np.max(np.abs(coef[g])) for g in groups])
    rep.gamma_norm = worst + float(coef_sup.sum())
    rep.sup_norm = float(np.max(np.abs(vals)))
    return rep


def residual_exponent(report: NormReport, node: int | None = None) -> float:
    """Log-log slope of the fit residual against the scale (one base node)."""
    rows = [r for r in report.fit_polynomials if node is None or r["node"] == node]
    if node is None and rows:
        node = rows[0]["node"]
        rows = [r for r in rows if r["node"] == node]
    d = np.array([r["scale"] for r in rows])
    res = np.array([r["residual"] for r in rows])
    return float(np.polyfit(np.log(d), np.log(res), 1)[0])


def equivalence_check(spec: GroupSpec, f, mesh: PanelMesh, alpha: float = 0.5,
                      scales=None, radius: float | None = None, n_base: int = 400,
                      seed: int = 0) -> dict:
    """gamma_norm / c2alpha_norm for one function."""
    scales = np.geomspace(2.5 * mesh.h, 0.5, 6) if scales is None else scales
    g2 = gamma2alpha_estimate(spec, f, mesh, scales, alpha, n_base=n_base, seed=seed)
    if spec.A_hat.any():
        c2 = c2alpha_estimate(spec, f, mesh, alpha, radius=radius)
    else:
        vals = f(mesh.nodes) if callable(f) else f
        c2 = c2alpha_nodes(spec, mesh, vals, alpha, radius)
    cn = c2.norm
    ratio = g2.gamma_norm / cn if cn > 0 else (0.0 if g2.gamma_norm == 0 else np.inf)
    return {"gamma_norm": g2.gamma_norm, "c2alpha_norm": cn, "ratio": ratio,
            "gamma": g2, "c2alpha": c2}
