import numpy as np
import pytest

from hlayer import fd_oracle as fd
from hlayer import kernels as kn


def _grid(h1, hx=0.1, ht=0.01):
    return fd.GridSpec.box(h1, [0.0, -0.2, -0.02], [0.2, 0.2, 0.02], hx, ht)


def test_grid_layout(h1):
    g = _grid(h1)
    assert g.shape == (3, 5, 5)
    np.testing.assert_allclose(g.spacing, [0.1, 0.1, 0.01])
    assert g.interior_mask().sum() == 1 * 3 * 3
    assert g.points().shape == (3, 5, 5, 3)


def test_stencil_exact_on_low_degree(h1):
    g = _grid(h1)
    P = g.points()
    cases = [
        (P[..., 0] ** 2 + P[..., 1] ** 2, 4.0),
        (P[..., 2], 0.0),
        (P[..., 0] ** 3, 6.0 * P[1, 2, 2, 0]),
    ]
    for u, want in cases:
        assert fd.sublaplacian_stencil(h1, g, u, (1, 2, 2)) == pytest.approx(want, abs=1e-9)
    with pytest.raises(fd.FDError):
        fd.sublaplacian_stencil(h1, g, cases[0][0], (0, 2, 2))


def test_t_squared_sees_the_twist(h1):
    # with X_1 = d_1 - x_2/2 d_t, X_2 = d_2 + x_1/2 d_t: sum X_j^2 t^2 = (x_1^2 + x_2^2)/2
    x = np.array([0.3, -0.2, 0.05])
    r = fd.harmonic_residual(h1, lambda X: X[..., 2] ** 2, x, 0.05)
    assert r[0] == pytest.approx(0.5 * (0.3 ** 2 + 0.2 ** 2), rel=1e-9)


def test_gamma_dirichlet_convergence(h1):
    lo_, hi_ = np.array([0.2, -0.15, -0.03]), np.array([0.5, 0.15, 0.03])
    pole = np.zeros(3)
    G = lambda X: kn.gamma_values(h1, X, pole)  # noqa: E731
    probe = np.array([[0.35, 0.0, 0.0], [0.3, 0.05, 0.01]])
    errs = []
    for hx, ht in ((0.05, 0.01), (0.025, 0.005)):
        grid = fd.GridSpec.box(h1, lo_, hi_, hx, ht)
        sol = fd.fd_dirichlet_solve(h1, grid, 0.0, G)
        assert sol.residual <= 1e-10
        errs.append(np.max(np.abs(fd.interpolate(sol, probe) - G(probe)) / G(probe)))
    assert errs[1] < errs[0] / 3
    assert errs[1] < 0.01


def test_mean_value_formula(h1):
    x = np.array([0.1, 0.0, 0.02])
    assert fd.mean_value_quadrature(h1, lambda e: np.ones(len(e)), x, 0.5) == \
        pytest.approx(1.0, abs=1e-8)
    pole = np.array([2.0, 1.0, 0.5])
    psi = lambda e: kn.gamma_values(h1, e, pole)  # noqa: E731
    want = float(psi(x[None])[0])
    assert fd.mean_value_quadrature(h1, psi, x, 0.4) == pytest.approx(want, rel=1e-6)
    assert fd.mean_value_mc(h1, psi, x, 0.4, 2 ** 14, seed=1) == pytest.approx(want, rel=1e-2)


def test_grid_dump(h1, tmp_path):
    g = _grid(h1)
    sol = fd.fd_dirichlet_solve(h1, g, 0.0, lambda X: X[..., 0])
    path = tmp_path / "grid.csv"
    fd.dump_grid_csv(sol, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "i0,i1,i2,value" and len(lines) == 1 + 75
    # x_1 is harmonic, and the stencil is exact on it
    np.testing.assert_allclose(sol.u, g.points()[..., 0], atol=1e-12)
