import math

import numpy as np
import pytest
import sympy as sym
from hypothesis import given, settings
from hypothesis import strategies as st

from oseen_cutfem import cutquad
from oseen_cutfem.errors import InvalidArgumentError, NotCutError

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def half_cut():
    return cutquad.decompose_cut_cell(REF, REF[:, 0] - 0.5)


def test_linear_cut_geometry():
    d = half_cut()
    assert d.inside_area == pytest.approx(0.375, abs=1e-15)
    assert d.outside_area == pytest.approx(0.125, abs=1e-15)
    seg = {tuple(np.round(p, 15)) for p in d.segment}
    assert seg == {(0.5, 0.0), (0.5, 0.5)}
    assert d.segment_length == pytest.approx(0.5)
    assert np.allclose(d.normal, [1.0, 0.0])


def test_uncut_cell_rejected():
    with pytest.raises(NotCutError):
        cutquad.decompose_cut_cell(REF, -np.ones(3))


@pytest.mark.parametrize("a,b", [(a, b) for a in range(5) for b in range(5) if a + b <= 4])
def test_monomials_over_trapezoid(a, b):
    x, y = sym.symbols("x y")
    exact = sym.integrate(sym.integrate(x**a * y**b, (y, 0, 1 - x)), (x, 0, sym.Rational(1, 2)))
    rule = cutquad.volume_rule(half_cut(), 4)
    val = np.sum(rule.weights * rule.points[:, 0] ** a * rule.points[:, 1] ** b)
    assert val == pytest.approx(float(exact), abs=1e-15)


@pytest.mark.parametrize("order", range(0, cutquad.MAX_ORDER + 1))
def test_reference_rules_positive_and_exact(order):
    pts, w = cutquad.reference_triangle_rule(order)
    assert np.all(w > 0)
    assert w.sum() == pytest.approx(0.5, abs=1e-15)
    for a in range(order + 1):
        b = order - a
        exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        assert np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(exact, rel=1e-12, abs=1e-15)


def test_full_cell_rule_area():
    tri = np.array([[0.3, 0.1], [1.2, 0.4], [0.5, 1.7]])
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    assert cutquad.volume_rule(tri, 2).weights.sum() == pytest.approx(area, rel=1e-14)


def test_surface_rule_half_cut():
    r = cutquad.surface_rule(half_cut(), 3)
    assert r.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(r.normals, [1.0, 0.0])


@pytest.mark.parametrize("k", range(1, 5))
def test_face_rule_exactness(k):
    face = np.array([[0.2, -0.1], [1.1, 0.5]])
    L = np.linalg.norm(face[1] - face[0])
    r = cutquad.face_rule(face, 2 * k)
    s = np.linalg.norm(r.points - face[0], axis=1) / L
    assert np.sum(r.weights) == pytest.approx(L, rel=1e-14)
    assert np.sum(r.weights * s ** (2 * k)) == pytest.approx(L / (2 * k + 1), rel=1e-13)
    rr = cutquad.face_rule(face[::-1], 2 * k)
    assert rr.weights.sum() == pytest.approx(r.weights.sum(), rel=1e-15)


def test_order_validation():
    with pytest.raises(InvalidArgumentError):
        cutquad.reference_triangle_rule(cutquad.MAX_ORDER + 1)
    with pytest.raises(InvalidArgumentError):
        cutquad.reference_segment_rule(-1)


def test_monte_carlo_area_oracle():
    rng = np.random.default_rng(7)
    pts = rng.random((1_000_000, 2))
    pts = pts[pts.sum(axis=1) <= 1.0]
    for _ in range(5):
        while True:
            c = rng.normal(size=3)
            vals = c[0] + c[1] * REF[:, 0] + c[2] * REF[:, 1]
            if vals.min() < 0 < vals.max():
                break
        d = cutquad.decompose_cut_cell(REF, vals)
        assert d.inside_area + d.outside_area == pytest.approx(0.5, abs=1e-14)
        mc = 0.5 * np.mean(c[0] + c[1] * pts[:, 0] + c[2] * pts[:, 1] < 0)
        assert abs(d.inside_area - mc) < 3e-3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3))
def test_random_cuts_partition_and_outward(vals):
    vals = np.asarray(vals)
    if not (vals.min() < -1e-6 and vals.max() > 1e-6):
        return
    d = cutquad.decompose_cut_cell(REF, vals)
    assert d.inside_area + d.outside_area == pytest.approx(0.5, abs=1e-14)
    grad = cutquad.linear_gradients(REF[None], vals[None])[0]
    assert np.allclose(d.normal, grad / np.linalg.norm(grad))
    r = cutquad.surface_rule(d, 2)
    eps = 1e-6
    for p in r.points:
        q = p + eps * d.normal
        phi = vals[0] + grad @ (q - REF[0])
        assert phi > vals[0] + grad @ (p - REF[0])


def test_circle_perimeter():
    from oseen_cutfem import build_uniform_mesh
    from oseen_cutfem import geometry as geo
    from oseen_cutfem.problems import BOX

    m = build_uniform_mesh(BOX, 32)
    g = geo.build_geometry(geo.static_circle(radius=1.0), m, 0.0, 0.0)
    seg = g.preview.decomposition["segments"]
    assert abs(np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1).sum() - 2 * math.pi) < 5e-3
