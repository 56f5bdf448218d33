import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from hlayer import group_core as gc
from hlayer import kernels as kn
from hlayer import plane_mesh as pm


def _ball_area_oracle():
    # {v^4 + 16 z^2 < 1}: |z| < sqrt(1 - v^4)/4, so area = 4 * int_0^1 sqrt(1-v^4)/4 dv * 2 / 2
    val, _ = integrate.quad(lambda v: np.sqrt(1 - v ** 4), 0, 1)
    return val


def test_ball_volume_matches_oracle(h1):
    assert pm.ball_volume(h1, 1.0) == pytest.approx(_ball_area_oracle(), rel=1e-10)
    for r in (0.5, 2.0, 4.0):
        assert pm.ball_volume(h1, r) / pm.ball_volume(h1, 1.0) == pytest.approx(r ** 3)


def test_mesh_total_weight_and_scaling(h1):
    m1 = pm.build_plane_mesh(h1, [0, 0], 1.0, 0.0625)
    assert m1.weights.sum() == pytest.approx(0.8740, abs=1e-3)
    m2 = pm.build_plane_mesh(h1, [0, 0], 2.0, 0.125)
    assert m2.weights.sum() / m1.weights.sum() == pytest.approx(8.0, abs=1e-2)
    assert np.all(m1.weights > 0)
    assert m1.radius_of_nodes().max() <= 1.0
    np.testing.assert_allclose(m1.spacing, [0.0625, 0.0625 ** 2])


def test_node_count_scaling(h1):
    n1 = pm.build_plane_mesh(h1, [0, 0], 1.0, 0.1).size
    n2 = pm.build_plane_mesh(h1, [0, 0], 1.0, 0.05).size
    assert n2 / n1 == pytest.approx(8.0, rel=0.1)


def test_mesh_preconditions(h1):
    with pytest.raises(pm.MeshError):
        pm.build_plane_mesh(h1, [0, 0], 1.0, 0.3)
    with pytest.raises(pm.MeshError):
        pm.build_plane_mesh(h1, [0, 0], -1.0, 0.1)


def test_mesh_center_translation(h1):
    c = np.array([0.3, -0.2])
    m = pm.build_plane_mesh(h1, c, 0.5, 0.05)
    d = gc.plane_gauge(h1, gc.plane_log(h1, c, m.nodes))
    assert d.max() <= 0.5 + 1e-12
    np.testing.assert_allclose(m.log, gc.plane_log(h1, c, m.nodes), atol=1e-14)


def test_higher_dimensional_mesh_volume(h2):
    # a quaternionic mesh at desk scale has too many cells; heisenberg(2) covers D > 2
    m = pm.build_plane_mesh(h2, np.zeros(h2.plane_dim), 1.0, 0.2)
    assert m.weights.sum() == pytest.approx(pm.ball_volume(h2, 1.0), rel=0.02)


def test_quadrature_converges_second_order(h1):
    f = lambda w: np.clip(1 - gc.plane_gauge(h1, w) ** 4 / 0.5 ** 4, 0, None) ** 4  # noqa: E731
    # exact value by the polar rule (f is radial in d~)
    s, ws = np.polynomial.legendre.leggauss(40)
    r = 0.25 * (s + 1)
    exact = pm.ball_volume(h1, 1.0) * 3 * np.sum(0.25 * ws * r ** 2 * (1 - r ** 4 / 0.5 ** 4) ** 4)
    errs = []
    for h in (0.1, 0.05, 0.025):
        m = pm.build_plane_mesh(h1, [0, 0], 0.6, h)
        errs.append(abs(np.dot(m.weights, f(m.log)) - exact))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_csv_dump(h1, tmp_path):
    m = pm.build_plane_mesh(h1, [0, 0], 1.0, 0.2)
    p = tmp_path / "mesh.csv"
    m.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "v2,z1,weight"
    assert len(lines) == m.size + 1


def test_perimeter_scaling(h1):
    p1 = pm.ball_perimeter(h1, 1.0)
    assert p1 > 0 and np.isfinite(p1)
    assert pm.ball_perimeter(h1, 2.0) / p1 == pytest.approx(2.0, rel=1e-6)
    assert pm.ball_perimeter(h1, 1e-3) / p1 == pytest.approx(1e-3, rel=1e-6)
    # the Euclidean length is reported too but is not homogeneous
    e = pm.ball_perimeter(h1, 2.0, "euclidean") / pm.ball_perimeter(h1, 1.0, "euclidean")
    assert abs(e - 2.0) > 0.1
    with pytest.raises(pm.MeshError):
        pm.ball_perimeter(h1, 0.0)


def test_shell_quadrature_scaling(h1):
    k = lambda w: kn.boundary_kernel_from_log(h1, w)  # noqa: E731
    a = pm.shell_quadrature(h1, k, 0.0, 1.0, 1.5)
    b = pm.shell_quadrature(h1, k, 0.0, 2.0, 1.5)
    assert b / a == pytest.approx(2 ** 1.5, rel=0.05)
    assert abs(pm.shell_quadrature(h1, k, 0.5, 2.0, 0.0, absolute=False)) <= 1e-10


def test_shell_quadrature_matches_fine_grid(h1):
    k = lambda w: kn.boundary_kernel_from_log(h1, w)  # noqa: E731
    val = pm.shell_quadrature(h1, k, 1.0, 2.0, 0.0)
    # brute-force tensor grid over the annulus
    v = np.linspace(-2, 2, 1601)
    z = np.linspace(-1, 1, 1601)
    V, Z = np.meshgrid(v, z, indexing="ij")
    W = np.stack([V, Z], -1)
    d = gc.plane_gauge(h1, W)
    sel = (d > 1) & (d < 2)
    ref = np.sum(np.abs(k(W[sel]))) * (v[1] - v[0]) * (z[1] - z[0])
    assert val == pytest.approx(ref, rel=0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_midpoint_property(c):
    x, y = np.array(c[:2]), np.array(c[2:])
    h = gc.make_prototype("heisenberg", 1)
    rho = gc.plane_gauge(h, x - y)
    if rho < 1e-6:
        return
    xi = pm.midpoint(x, y)
    assert gc.plane_gauge(h, xi - y) == pytest.approx(rho / 2, rel=1e-12)
    # equality holds exactly when x and y share the v coordinate
    d = gc.plane_gauge(h, xi - x)
    assert d <= np.sqrt(3) / 2 * rho * (1 + 1e-12)
    if abs(x[0] - y[0]) > 1e-3 * rho:
        assert d < np.sqrt(3) / 2 * rho


def test_mirror_index(h1):
    m = pm.build_plane_mesh(h1, [0, 0], 1.0, 0.1)
    perm = m.mirror_index([0])
    assert np.all(perm >= 0)
    np.testing.assert_allclose(m.weights[perm], m.weights)
    np.testing.assert_allclose(m.log[perm, 0], -m.log[:, 0])
