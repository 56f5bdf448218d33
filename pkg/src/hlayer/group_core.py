"""Arithmetic of prototype H-type groups.

A prototype group is R^{m+n} with coordinates (x, t), x in R^m, t in R^n, and
the law

    (x, t) o (y, tau) = (x + y, t_k + tau_k + 1/2 <A^(k) x, y>)

for skew-symmetric orthogonal, pairwise anticommuting matrices A^(k).

Every function below accepts either :class:`Point` / :class:`PlanePoint`
instances or *packed* arrays of shape ``(..., m + n)`` (``(..., m - 1 + n)``
for plane points).  Packed arrays are broadcast, which is what the kernel and
quadrature code relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

TOL = 1e-12


class GroupError(ValueError):
    """Invalid group parameters or mismatched dimensions."""


# --------------------------------------------------------------------------
# Types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSpec:
    """A prototype H-type group (or a non-validating custom one).

    Attributes
    ----------
    m, n : int
        Horizontal and center dimensions.
    A : ndarray, shape (n, m, m)
        The structure matrices A^(k).
    Q : int
        Homogeneous dimension m + 2n.
    c_q : float
        Fundamental-solution constant; NaN until calibrated.
    kind : str
        ``"heisenberg(nu)"``, ``"quaternionic"`` or ``"custom"``.
    """

    m: int
    n: int
    A: np.ndarray
    Q: int
    c_q: float = float("nan")
    kind: str = "custom"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 3 or A.shape != (self.n, self.m, self.m):
            raise GroupError(
                f"A must have shape ({self.n}, {self.m}, {self.m}), got {A.shape}")
        if self.m < 2 or self.n < 1:
            raise GroupError("need m >= 2 and n >= 1")
        if self.Q != self.m + 2 * self.n:
            raise GroupError("Q must equal m + 2n")
        A = A.copy()
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def dim(self) -> int:
        return self.m + self.n

    @property
    def plane_dim(self) -> int:
        return self.m - 1 + self.n

    @property
    def A_hat(self) -> np.ndarray:
        """Blocks of A^(k) acting on the plane coordinates x_2..x_m."""
        return self.A[:, 1:, 1:]

    @property
    def a1(self) -> np.ndarray:
        """First rows a^k_{1,i}, shape (n, m)."""
        return self.A[:, 0, :]

    @property
    def calibrated(self) -> bool:
        return bool(np.isfinite(self.c_q) and self.c_q > 0)

    def with_cq(self, c_q: float) -> "GroupSpec":
        return replace(self, c_q=float(c_q))

    def require_cq(self) -> float:
        if not self.calibrated:
            raise GroupError("c_q is not calibrated for this group")
        return self.c_q

    def is_heisenberg1(self) -> bool:
        return self.m == 2 and self.n == 1


@dataclass(frozen=True)
class Point:
    x: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        t = np.atleast_1d(np.asarray(self.t, dtype=float))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
            raise GroupError("point coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)

    def packed(self) -> np.ndarray:
        return np.concatenate([self.x, self.t])


@dataclass(frozen=True)
class PlanePoint:
    """A point of the plane Pi_r = {x_1 = r}; ``xhat`` holds x_2..x_m."""

    xhat: np.ndarray
    t: np.ndarray
    level: float = 0.0

    def __post_init__(self):
        xh = np.atleast_1d(np.asarray(self.xhat, dtype=float))
        t = np.atleast_1d(np.asarray(self.t, dtype=float))
        if not (np.all(np.isfinite(xh)) and np.all(np.isfinite(t))
                and np.isfinite(self.level)):
            raise GroupError("plane point coordinates must be finite")
        object.__setattr__(self, "xhat", xh)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "level", float(self.level))

    def packed(self) -> np.ndarray:
        return np.concatenate([self.xhat, self.t])

    def embed(self) -> Point:
        return Point(np.concatenate([[self.level], self.xhat]), self.t)


PointLike = Union[Point, np.ndarray, Sequence[float]]
PlaneLike = Union[PlanePoint, np.ndarray, Sequence[float]]


def _pack(spec: GroupSpec, p) -> np.ndarray:
    if isinstance(p, Point):
        arr = p.packed()
    elif isinstance(p, PlanePoint):
        arr = p.embed().packed()
    else:
        arr = np.asarray(p, dtype=float)
    if arr.shape[-1] != spec.dim:
        raise GroupError(f"expected last axis {spec.dim}, got {arr.shape}")
    return arr


def _unpack_like(spec: GroupSpec, arr: np.ndarray, like):
    if isinstance(like, (Point, PlanePoint)):
        return Point(arr[: spec.m], arr[spec.m:])
    return arr


def _pack_plane(spec: GroupSpec, p) -> np.ndarray:
    if isinstance(p, PlanePoint):
        arr = p.packed()
    else:
        arr = np.asarray(p, dtype=float)
    if arr.shape[-1] != spec.plane_dim:
        raise GroupError(f"expected last axis {spec.plane_dim}, got {arr.shape}")
    return arr


# --------------------------------------------------------------------------
# Construction and validation
# --------------------------------------------------------------------------

_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def _quaternion_units() -> np.ndarray:
    # left multiplication by i, j, k on (a, b, c, d) = a + bi + cj + dk
    qi = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]])
    qj = np.array([[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]])
    qk = np.array([[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]])
    return np.array([qi, qj, qk], dtype=float)


def make_prototype(kind: str, *params: int) -> GroupSpec:
    """Build a shipped prototype group.

    ``make_prototype("heisenberg", nu)`` gives H^nu with m = 2 nu, n = 1 and the
    symplectic matrix blocks [[0, -1], [1, 0]]; for nu = 1 the law reproduces
    y o x = (y + x, y3 + x3 + (y1 x2 - y2 x1)/2).  ``make_prototype("quaternionic")``
    gives m = 4, n = 3 with the quaternion units.  Kinds in the form
    ``"heisenberg(2)"`` are accepted too.
    """
    kind = kind.strip().lower()
    if kind.startswith("heisenberg(") and kind.endswith(")"):
        params = (int(kind[len("heisenberg("):-1]),)
        kind = "heisenberg"
    if kind == "heisenberg":
        nu = int(params[0]) if params else 1
        if nu < 1:
            raise GroupError("heisenberg(nu) needs nu >= 1")
        A = np.zeros((1, 2 * nu, 2 * nu))
        for b in range(nu):
            A[0, 2 * b:2 * b + 2, 2 * b:2 * b + 2] = _J
        return GroupSpec(2 * nu, 1, A, 2 * nu + 2, kind=f"heisenberg({nu})")
    if kind == "quaternionic":
        return GroupSpec(4, 3, _quaternion_units(), 10, kind="quaternionic")
    raise GroupError(f"unknown group kind {kind!r}")


def custom_group(A: np.ndarray) -> GroupSpec:
    A = np.asarray(A, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise GroupError("custom group needs matrices of shape (n, m, m)")
    n, m, _ = A.shape
    return GroupSpec(m, n, A, m + 2 * n, kind="custom")


def nothormander_example() -> GroupSpec:
    """Five-dimensional example with X_3 = d_3 + x_1 d_{t_2}.

    The matrices transcribe the three displayed vector fields literally.  They
    fail the prototype axioms (a 3x3 skew matrix is singular), so this group
    is a non-validating test case only.
    """
    A1 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    A2 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    return custom_group(np.array([A1, A2]))


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    max_skew_defect: float
    max_orth_defect: float
    max_anticomm_defect: float
    hoermander_rank_on_plane: int
    details: dict = field(default_factory=dict)


def hoermander_rank_on_plane(spec: GroupSpec) -> int:
    """Rank at the origin of span{X_2..X_m, [X_i, X_j]} restricted to Pi."""
    m, n = spec.m, spec.n
    dim = m - 1 + n
    vecs = []
    for i in range(1, m):
        e = np.zeros(dim)
        e[i - 1] = 1.0
        vecs.append(e)
    # [X_i, X_j] = 1/2 sum_k (a^k_ji - a^k_ij) d_{t_k}
    for i in range(1, m):
        for j in range(i + 1, m):
            e = np.zeros(dim)
            e[m - 1:] = 0.5 * (spec.A[:, j, i] - spec.A[:, i, j])
            vecs.append(e)
    return int(np.linalg.matrix_rank(np.array(vecs), tol=1e-10))


def validate_h_type(spec: GroupSpec) -> ValidationReport:
    A = spec.A
    if A.shape != (spec.n, spec.m, spec.m):
        raise GroupError("matrix shape mismatch")
    eye = np.eye(spec.m)
    skew = max(float(np.max(np.abs(a + a.T))) for a in A)
    orth = max(float(np.max(np.abs(a.T @ a - eye))) for a in A)
    anti = 0.0
    for k in range(spec.n):
        for l in range(k + 1, spec.n):
            anti = max(anti, float(np.max(np.abs(A[k] @ A[l] + A[l] @ A[k]))))
    passed = skew <= TOL and orth <= TOL and anti <= TOL
    return ValidationReport(passed, skew, orth, anti, hoermander_rank_on_plane(spec))


# --------------------------------------------------------------------------
# Group operations (vectorised over leading axes)
# --------------------------------------------------------------------------


def _bilinear(spec: GroupSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """<A^(k) a, b> for every k; a, b of shape (..., m) -> (..., n)."""
    return np.einsum("kij,...j,...i->...k", spec.A, a, b)


def _join(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    lead = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    return np.concatenate([np.broadcast_to(a, lead + a.shape[-1:]),
                           np.broadcast_to(b, lead + b.shape[-1:])], axis=-1)


def mul(spec: GroupSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Packed group product a o b."""
    m = spec.m
    xa, ta = a[..., :m], a[..., m:]
    xb, tb = b[..., :m], b[..., m:]
    x = xa + xb
    t = ta + tb + 0.5 * _bilinear(spec, xa, xb)
    return _join(x, t)


def group_mul(spec: GroupSpec, y: PointLike, x: PointLike):
    """Return y o x."""
    out = mul(spec, _pack(spec, y), _pack(spec, x))
    return _unpack_like(spec, out, y)


def group_inv(spec: GroupSpec, xi: PointLike):
    arr = _pack(spec, xi)
    return _unpack_like(spec, -arr, xi)


def dilate(spec: GroupSpec, lam: float, xi: PointLike):
    if not lam > 0:
        raise GroupError("dilation factor must be positive")
    arr = _pack(spec, xi).copy()
    arr[..., : spec.m] *= lam
    arr[..., spec.m:] *= lam * lam
    return _unpack_like(spec, arr, xi)


def gauge_norm(spec: GroupSpec, xi: PointLike):
    arr = _pack(spec, xi)
    x2 = np.sum(arr[..., : spec.m] ** 2, axis=-1)
    t2 = np.sum(arr[..., spec.m:] ** 2, axis=-1)
    return (x2 * x2 + 16.0 * t2) ** 0.25


def log_coords(spec: GroupSpec, base: PointLike, xi: PointLike):
    """Log_base(xi) = base^{-1} o xi split into (v, z)."""
    w = mul(spec, -_pack(spec, base), _pack(spec, xi))
    return w[..., : spec.m], w[..., spec.m:]


def gauge_distance(spec: GroupSpec, xi: PointLike, eta: PointLike):
    """d(xi, eta) = |eta^{-1} o xi|."""
    w = mul(spec, -_pack(spec, eta), _pack(spec, xi))
    return gauge_norm(spec, w)


def exp_from_log(spec: GroupSpec, base: PointLike, v, z):
    """Inverse of :func:`log_coords`: base o (v, z)."""
    arr = np.concatenate([np.asarray(v, float), np.asarray(z, float)], axis=-1)
    return mul(spec, _pack(spec, base), arr)


def horizontal_frame(spec: GroupSpec, xi) -> np.ndarray:
    """Euclidean coefficients of X_1..X_m at packed points: shape (..., m, m+n).

    X_j = d_{x_j} + 1/2 sum_k (A^(k) x)_j d_{t_k}.
    """
    arr = np.asarray(xi, dtype=float)
    m = spec.m
    x = arr[..., :m]
    lead = arr.shape[:-1]
    F = np.zeros(lead + (m, spec.dim))
    F[..., np.arange(m), np.arange(m)] = 1.0
    F[..., :, m:] = 0.5 * np.einsum("kji,...i->...jk", spec.A, x)
    return F


# --------------------------------------------------------------------------
# Plane coordinates
# --------------------------------------------------------------------------


def plane_log(spec: GroupSpec, base, p) -> np.ndarray:
    """Within-plane Log coordinates (vhat, z) of packed plane points at level 0.

    Equals the (x_2..x_m, t) part of eta^{-1} o xi for xi = (0, p), eta = (0, base).
    """
    b = _pack_plane(spec, base)
    q = _pack_plane(spec, p)
    mh = spec.m - 1
    vh = q[..., :mh] - b[..., :mh]
    z = q[..., mh:] - b[..., mh:] - 0.5 * np.einsum(
        "kij,...j,...i->...k", spec.A_hat, b[..., :mh], q[..., :mh])
    return _join(vh, z)


def plane_gauge(spec: GroupSpec, w) -> np.ndarray:
    """(|vhat|^4 + 16 |z|^2)^{1/4} of packed within-plane coordinates."""
    w = np.asarray(w, dtype=float)
    mh = spec.m - 1
    v2 = np.sum(w[..., :mh] ** 2, axis=-1)
    return (v2 * v2 + 16.0 * np.sum(w[..., mh:] ** 2, axis=-1)) ** 0.25


def plane_dilate(spec: GroupSpec, lam: float, w) -> np.ndarray:
    w = np.array(w, dtype=float)
    mh = spec.m - 1
    w[..., :mh] *= lam
    w[..., mh:] *= lam * lam
    return w


def plane_distance(spec: GroupSpec, xi: PlaneLike, eta: PlaneLike,
                   mode: str = "tilde") -> float:
    """Distance between two points of the same plane Pi_r.

    ``mode="tilde"`` is the level independent decoupled distance computed from
    the level-0 within-plane Log coordinates; ``mode="induced"`` is the gauge
    distance of the embedded points.  They agree at level 0.
    """
    lx = xi.level if isinstance(xi, PlanePoint) else 0.0
    ly = eta.level if isinstance(eta, PlanePoint) else 0.0
    if lx != ly:
        raise GroupError("plane points lie on different levels")
    if mode == "tilde":
        return plane_gauge(spec, plane_log(spec, eta, xi))
    if mode == "induced":
        a = np.asarray(_pack_plane(spec, xi))
        b = np.asarray(_pack_plane(spec, eta))
        ea = np.concatenate([np.full(a.shape[:-1] + (1,), lx), a], axis=-1)
        eb = np.concatenate([np.full(b.shape[:-1] + (1,), ly), b], axis=-1)
        return gauge_distance(spec, ea, eb)
    raise GroupError(f"unknown plane distance mode {mode!r}")


def embed_plane(spec: GroupSpec, p, level: float = 0.0) -> np.ndarray:
    """Packed plane points -> packed group points with x_1 = level."""
    p = np.asarray(p, dtype=float)
    lv = np.broadcast_to(np.asarray(level, dtype=float), p.shape[:-1])[..., None]
    return np.concatenate([lv, p], axis=-1)


# --------------------------------------------------------------------------
# Group-spec text files
# --------------------------------------------------------------------------


def load_group_file(path, allow_invalid: bool = False) -> GroupSpec:
    """Read ``m n`` then n blocks of m rows of m reals."""
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        m, n = int(rows[0][0]), int(rows[0][1])
        vals = np.array([[float(v) for v in r] for r in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise GroupError(f"malformed group file {path}: {exc}") from exc
    if vals.shape != (n * m, m):
        raise GroupError(f"group file {path}: expected {n * m} rows of {m} reals")
    spec = custom_group(vals.reshape(n, m, m))
    rep = validate_h_type(spec)
    if not rep.passed and not allow_invalid:
        raise GroupError(
            f"group file {path} fails the H-type axioms "
            f"(skew {rep.max_skew_defect:.3g}, orth {rep.max_orth_defect:.3g}, "
            f"anticomm {rep.max_anticomm_defect:.3g})")
    return spec


def write_group_file(spec: GroupSpec, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{spec.m} {spec.n}\n")
        for a in spec.A:
            for row in a:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
