"""Fixed background triangulation of an axis-aligned box."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, MeshInvalidError

# local face i of a triangle is opposite local vertex i
LOCAL_FACES = np.array([[1, 2], [2, 0], [0, 1]])

DEFAULT_QUASI_UNIFORM_BOUND = 2.0 * np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class BackgroundMesh:
    """Simplicial mesh with full face/cell adjacency.

    ``faces`` holds vertex pairs sorted ascending; ``face_cells[f] = (c0, c1)``
    with ``c1 == -1`` on the box boundary. ``face_normals[f]`` is the unit
    normal pointing out of ``c0`` (towards ``c1`` for interior faces).
    """

    dimension: int
    vertices: np.ndarray
    cells: np.ndarray
    faces: np.ndarray
    face_cells: np.ndarray
    face_normals: np.ndarray
    cell_faces: np.ndarray
    box: tuple = field(default=None)
    n: int = 0

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def cell_coords(self) -> np.ndarray:
        """Vertex coordinates per cell, shape (ncells, 3, 2)."""
        return self.vertices[self.cells]

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        x = self.cell_coords
        edges = x[:, [1, 2, 0]] - x[:, [2, 0, 1]]
        return np.linalg.norm(edges, axis=2).max(axis=1)

    @cached_property
    def cell_areas(self) -> np.ndarray:
        return 0.5 * _signed_double_area(self.cell_coords)

    @cached_property
    def face_lengths(self) -> np.ndarray:
        x = self.vertices[self.faces]
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)

    @cached_property
    def shape_ratios(self) -> np.ndarray:
        """Inradius over circumradius per cell (1/2 for an equilateral triangle)."""
        x = self.cell_coords
        a = np.linalg.norm(x[:, 1] - x[:, 2], axis=1)
        b = np.linalg.norm(x[:, 2] - x[:, 0], axis=1)
        c = np.linalg.norm(x[:, 0] - x[:, 1], axis=1)
        area = self.cell_areas
        inradius = 2.0 * area / (a + b + c)
        circumradius = a * b * c / (4.0 * area)
        return inradius / circumradius

    @property
    def h(self) -> float:
        return float(self.cell_diameters.max())

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @cached_property
    def cell_neighbors(self) -> np.ndarray:
        """Neighbor across each local face, -1 on the boundary; shape (ncells, 3)."""
        fc = self.face_cells[self.cell_faces]
        own = np.arange(self.num_cells)[:, None]
        return np.where(fc[..., 0] == own, fc[..., 1], fc[..., 0])

    def write_vtk(self, path, cell_data: dict | None = None, point_data: dict | None = None) -> None:
        write_vtk(path, self.vertices, self.cells, cell_data=cell_data, point_data=point_data)


def _signed_double_area(x: np.ndarray) -> np.ndarray:
    e1 = x[..., 1, :] - x[..., 0, :]
    e2 = x[..., 2, :] - x[..., 0, :]
    return e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]


def build_uniform_mesh(box, n: int, quasi_uniform_bound: float = DEFAULT_QUASI_UNIFORM_BOUND) -> BackgroundMesh:
    """Split an ``n x n`` grid of the box into two triangles per square.

    Every square is cut along the diagonal from its lower-left to its
    upper-right corner.
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    (x0, x1), (y0, y1) = (tuple(map(float, b)) for b in box)
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgumentError(f"degenerate or inverted box {box!r}")

    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    mesh = mesh_from_cells(vertices, cells, box=((x0, x1), (y0, y1)), n=n)
    diam = mesh.cell_diameters
    if diam.max() / diam.min() > quasi_uniform_bound:
        raise MeshInvalidError("mesh violates the quasi-uniformity bound")
    return mesh


def mesh_from_cells(vertices: np.ndarray, cells: np.ndarray, box=None, n: int = 0) -> BackgroundMesh:
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64).copy()
    area2 = _signed_double_area(vertices[cells])
    if np.any(area2 == 0.0):
        raise MeshInvalidError("degenerate cell")
    flip = area2 < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]

    faces, face_cells, cell_faces = face_adjacency_tables(cells)
    normals = _face_normals(vertices, cells, faces, face_cells, cell_faces)
    return BackgroundMesh(
        dimension=2,
        vertices=vertices,
        cells=cells,
        faces=faces,
        face_cells=face_cells,
        face_normals=normals,
        cell_faces=cell_faces,
        box=box,
        n=n,
    )


def face_adjacency_tables(cells: np.ndarray):
    ncells = len(cells)
    local = cells[:, LOCAL_FACES]  # (ncells, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    faces, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshInvalidError("non-manifold face with more than two incident cells")
    cell_faces = inverse.reshape(ncells, 3)

    owner = np.repeat(np.arange(ncells), 3)
    order = np.argsort(inverse, kind="stable")
    face_cells = -np.ones((len(faces), 2), dtype=np.int64)
    sorted_faces = inverse[order]
    sorted_owner = owner[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_faces[1:] != sorted_faces[:-1]
    face_cells[sorted_faces[first], 0] = sorted_owner[first]
    face_cells[sorted_faces[~first], 1] = sorted_owner[~first]
    return faces, face_cells, cell_faces


def _face_normals(vertices, cells, faces, face_cells, cell_faces):
    c0 = face_cells[:, 0]
    x = vertices[faces]
    t = x[:, 1] - x[:, 0]
    t /= np.linalg.norm(t, axis=1)[:, None]
    nrm = np.column_stack([t[:, 1], -t[:, 0]])
    # orient out of c0: compare with direction face midpoint - c0 centroid
    mid = x.mean(axis=1)
    centroid = vertices[cells[c0]].mean(axis=1)
    flip = np.einsum("ij,ij->i", nrm, mid - centroid) < 0
    nrm[flip] *= -1.0
    return nrm


def face_adjacency(mesh: BackgroundMesh):
    """Return ``(faces, face_cells, face_normals)``."""
    return mesh.faces, mesh.face_cells, mesh.face_normals


def mesh_metrics(mesh: BackgroundMesh):
    """Return ``(h, min h_T, shape-regularity ratio)``.

    The ratio is the smallest inradius/circumradius over all cells.
    """
    diam = mesh.cell_diameters
    return float(diam.max()), float(diam.min()), float(mesh.shape_ratios.min())


def write_vtk(path, vertices, cells, cell_data=None, point_data=None) -> None:
    """Legacy ASCII VTK unstructured grid with triangle cells."""
    path = Path(path)
    nv, nc = len(vertices), len(cells)
    lines = [
        "# vtk DataFile Version 3.0",
        "oseen_cutfem",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in vertices]
    lines.append(f"CELLS {nc} {4 * nc}")
    lines += [f"3 {a} {b} {c}" for a, b, c in cells]
    lines.append(f"CELL_TYPES {nc}")
    lines += ["5"] * nc
    for header, count, data in (("CELL_DATA", nc, cell_data), ("POINT_DATA", nv, point_data)):
        if not data:
            continue
        lines.append(f"{header} {count}")
        for name, values in data.items():
            values = np.asarray(values)
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines += [f"{v:.17g}" for v in values]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{v[0]:.17g} {v[1]:.17g} 0" for v in values]
    path.write_text("\n".join(lines) + "\n")
