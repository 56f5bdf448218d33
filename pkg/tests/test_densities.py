import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hlayer import densities as de
from hlayer import group_core as gc


def test_bump_support_and_peak(h1):
    f = de.bump(h1, None, 0.5)
    assert f(np.zeros(2)) == 1.0
    p = np.array([[0.5, 0.0], [0.0, 0.0625], [0.6, 0.1]])
    np.testing.assert_array_equal(f(p), 0.0)
    c = np.array([0.2, 0.05])
    g = de.bump(h1, c, 0.3)
    assert g(c) == 1.0


def test_suite_is_twenty_compact_functions(h1):
    suite = de.holder_suite(h1, 0.4)
    assert len(suite) == 20 and len({n for n, _ in suite}) == 20
    rng = np.random.default_rng(3)
    far = rng.uniform(-1, 1, (200, 2))
    far = far[gc.plane_gauge(h1, far) > 0.6 + 1e-9]
    for _, f in suite:
        np.testing.assert_allclose(f(far), 0.0, atol=1e-15)
        assert np.all(np.isfinite(f(rng.uniform(-0.5, 0.5, (50, 2)))))


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-0.2, 0.2))
def test_symmetric_bump_invariant(v, z):
    s = gc.make_prototype("heisenberg", 1)
    f = de.symmetric_bump(s, 0.5, 0.01)
    p = np.array([v, z])
    assert f(de.reflect_plane(s, p)) == pytest.approx(f(p), abs=1e-15)


def test_named_lookup(h1):
    p = np.array([[0.1, 0.01]])
    assert de.named(h1, "bump", rho=0.5)(p) == de.bump(h1, None, 0.5)(p)
    np.testing.assert_array_equal(de.named(h1, "zero")(p), [0.0])
    for name in ("gaussian", "polybump", "symbump"):
        assert np.isfinite(de.named(h1, name)(p)).all()
    with pytest.raises(ValueError):
        de.named(h1, "nope")


def test_poly_bump_core(h1):
    f = de.poly_bump(h1, (1.0, 2.0, 3.0, 4.0), None, 10.0)
    p = np.array([0.1, 0.01])
    cut = de.bump(h1, None, 10.0)(p)
    assert f(p) == pytest.approx((1 + 0.2 + 0.03 + 0.04) * cut, rel=1e-14)
