import math

import numpy as np
import pytest

from oseen_cutfem import build_uniform_mesh, face_adjacency, mesh_metrics
from oseen_cutfem.errors import InvalidArgumentError, MeshInvalidError
from oseen_cutfem.mesh import mesh_from_cells

UNIT = ((0.0, 1.0), (0.0, 1.0))


def edge_set(cells):
    """Independent edge enumeration from the cell list."""
    edges = set()
    for c in cells:
        for a, b in ((c[0], c[1]), (c[1], c[2]), (c[2], c[0])):
            edges.add((min(a, b), max(a, b)))
    return edges


def test_single_square():
    m = build_uniform_mesh(UNIT, 1)
    assert (m.num_cells, m.num_vertices) == (2, 4)
    faces, fc, _ = face_adjacency(m)
    interior = fc[:, 1] >= 0
    assert interior.sum() == 1
    assert np.all(fc[interior][0] >= 0)


def test_counts_n4_against_edge_enumeration():
    m = build_uniform_mesh(UNIT, 4)
    assert (m.num_cells, m.num_vertices) == (32, 25)
    edges = edge_set(m.cells)
    assert len(edges) == 56 == m.num_faces
    assert {tuple(f) for f in m.faces} == edges
    assert len(m.interior_faces) == 56 - 4 * 4
    assert len(m.boundary_faces) == 16


def test_face_incidence_counts():
    m = build_uniform_mesh(((-2, 2), (-2, 2)), 8)
    count = np.zeros(m.num_faces, int)
    for f in m.cell_faces.ravel():
        count[f] += 1
    assert np.all(count[m.interior_faces] == 2)
    assert np.all(count[m.boundary_faces] == 1)
    assert np.all(m.face_cells[m.boundary_faces, 1] == -1)


def test_normals_point_from_c0_to_c1():
    m = build_uniform_mesh(UNIT, 5)
    cen = m.cell_coords.mean(axis=1)
    f = m.interior_faces
    d = cen[m.face_cells[f, 1]] - cen[m.face_cells[f, 0]]
    assert np.all(np.einsum("fi,fi->f", d, m.face_normals[f]) > 0)
    assert np.allclose(np.linalg.norm(m.face_normals, axis=1), 1.0)
    # boundary normals point out of the box
    fb = m.boundary_faces
    mid = m.vertices[m.faces[fb]].mean(axis=1)
    out = mid - cen[m.face_cells[fb, 0]]
    assert np.all(np.einsum("fi,fi->f", out, m.face_normals[fb]) > 0)


def test_orientation_positive():
    m = build_uniform_mesh(((-2, 2), (-2, 2)), 7)
    x = m.cell_coords
    e1, e2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
    assert np.all(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] > 0)


def test_h_is_square_diagonal():
    m = build_uniform_mesh(((-2, 2), (-2, 2)), 16)
    assert m.h == pytest.approx(math.sqrt(2) * 4 / 16, rel=1e-14)


def test_metrics_uniform_and_refinement():
    m4, m8 = build_uniform_mesh(UNIT, 4), build_uniform_mesh(UNIT, 8)
    h4, hmin4, r4 = mesh_metrics(m4)
    h8, _, r8 = mesh_metrics(m8)
    assert hmin4 == pytest.approx(h4)
    assert h8 == pytest.approx(h4 / 2, rel=1e-14)
    # right isosceles triangle with legs a: inradius a(2 - sqrt2)/2, circumradius a/sqrt2
    expected = (2 - math.sqrt(2)) / 2 * math.sqrt(2)
    assert r4 == pytest.approx(expected, rel=1e-12)
    assert r8 == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("n", [0, -3, 2.5, True])
def test_invalid_subdivisions(n):
    with pytest.raises(InvalidArgumentError):
        build_uniform_mesh(UNIT, n)


def test_degenerate_box():
    with pytest.raises(InvalidArgumentError):
        build_uniform_mesh(((0, 0), (0, 1)), 2)


def test_inverted_cell_rejected_or_fixed():
    verts = np.array([[0, 0], [1, 0], [0, 1.0]])
    m = mesh_from_cells(verts, np.array([[0, 2, 1]]))
    x = m.cell_coords[0]
    e1, e2 = x[1] - x[0], x[2] - x[0]
    assert e1[0] * e2[1] - e1[1] * e2[0] > 0


def test_quasi_uniform_bound_enforced():
    with pytest.raises(MeshInvalidError):
        build_uniform_mesh(((0, 4), (0, 1)), 4, quasi_uniform_bound=0.5)
