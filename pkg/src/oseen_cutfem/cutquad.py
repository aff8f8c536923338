"""Quadrature on cut triangles, interface segments and full faces.

The discrete domain is the negative set of a piecewise linear level set,
so every cut triangle splits into straight-sided pieces and all rules
below are ordinary simplex rules mapped onto those pieces.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import InvalidArgumentError, NotCutError

MAX_ORDER = 10


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray | None = None


@dataclass(frozen=True)
class CutDecomposition:
    """Split of one cut triangle by the zero line of a linear level set.

    ``normal`` points out of the negative (inside) region.
    """

    cell: int
    inside: np.ndarray  # (k, 3, 2)
    outside: np.ndarray  # (k, 3, 2)
    segment: np.ndarray  # (2, 2)
    normal: np.ndarray  # (2,)

    @property
    def inside_area(self) -> float:
        return float(np.abs(_double_area(self.inside)).sum() / 2)

    @property
    def outside_area(self) -> float:
        return float(np.abs(_double_area(self.outside)).sum() / 2)

    @property
    def segment_length(self) -> float:
        return float(np.linalg.norm(self.segment[1] - self.segment[0]))


def _double_area(tri):
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    return e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]


def _check_order(order):
    if int(order) != order or order < 0 or order > MAX_ORDER:
        raise InvalidArgumentError(f"quadrature order must be an integer in [0, {MAX_ORDER}], got {order!r}")
    return max(int(order), 1)


@lru_cache(maxsize=None)
def reference_triangle_rule(order: int):
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule on the unit triangle.

    Returns ``(xi, w)`` with ``xi`` of shape (nq, 2); weights sum to 1/2 and
    are all positive.
    """
    order = _check_order(order)
    npts = (order + 2) // 2
    xj, wj = roots_jacobi(npts, 1.0, 0.0)
    xl, wl = np.polynomial.legendre.leggauss(npts)
    u = 0.5 * (xj + 1.0)
    wu = wj / 4.0
    v = 0.5 * (xl + 1.0)
    wv = wl / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    xi = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return xi, W.ravel()


@lru_cache(maxsize=None)
def reference_segment_rule(order: int):
    """Gauss-Legendre rule on [0, 1]."""
    order = _check_order(order)
    npts = (order + 2) // 2
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def map_triangles(tris: np.ndarray, order: int):
    """Map the reference rule onto triangles of shape (..., 3, 2).

    Returns points (..., nq, 2) and weights (..., nq).
    """
    xi, w = reference_triangle_rule(order)
    v0 = tris[..., 0, :]
    e1 = tris[..., 1, :] - v0
    e2 = tris[..., 2, :] - v0
    pts = v0[..., None, :] + xi[:, 0, None] * e1[..., None, :] + xi[:, 1, None] * e2[..., None, :]
    det = np.abs(_double_area(tris))
    return pts, det[..., None] * w


def map_segments(segs: np.ndarray, order: int):
    """Map the Gauss rule onto segments of shape (..., 2, 2)."""
    s, w = reference_segment_rule(order)
    a = segs[..., 0, :]
    d = segs[..., 1, :] - a
    pts = a[..., None, :] + s[:, None] * d[..., None, :]
    length = np.linalg.norm(d, axis=-1)
    return pts, length[..., None] * w


def decompose_cut_cells(coords: np.ndarray, values: np.ndarray, vertex_ids: np.ndarray | None = None):
    """Vectorised split of triangles by the zero line of their linear interpolant.

    coords: (nc, 3, 2); values: (nc, 3) with mixed signs and no zeros.
    Returns a dict with ``inside`` and ``outside`` sub-triangles (nc, 2, 3, 2)
    padded by degenerate triangles, ``segments`` (nc, 2, 2) and unit
    ``normals`` (nc, 2) pointing towards positive values.
    """
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    nc = len(coords)
    neg = values < 0
    nneg = neg.sum(axis=1)
    if np.any((nneg == 0) | (nneg == 3)):
        raise NotCutError("cell is not cut by the level set")
    if vertex_ids is None:
        vertex_ids = np.tile(np.arange(3), (nc, 1))

    # the vertex whose sign differs from the other two goes first
    lonely_is_neg = nneg == 1
    lonely = np.where(lonely_is_neg, np.argmax(neg, axis=1), np.argmax(~neg, axis=1))
    perm = (lonely[:, None] + np.arange(3)[None, :]) % 3
    rows = np.arange(nc)[:, None]
    x = coords[rows, perm]
    f = values[rows, perm]
    gid = vertex_ids[rows, perm]

    def crossing(i, j):
        t = f[:, i] / (f[:, i] - f[:, j])
        return x[:, i] + t[:, None] * (x[:, j] - x[:, i])

    pa = crossing(0, 1)
    pb = crossing(0, 2)
    xl, xa, xb = x[:, 0], x[:, 1], x[:, 2]

    single = np.stack([xl, pa, pb], axis=1)
    degenerate = np.repeat(xl[:, None, :], 3, axis=1)
    d1 = np.linalg.norm(xa - pb, axis=1)
    d2 = np.linalg.norm(xb - pa, axis=1)
    use_d1 = (d1 < d2) | ((d1 == d2) & (gid[:, 1] < gid[:, 2]))
    q1 = np.where(use_d1[:, None, None], np.stack([xa, xb, pb], axis=1), np.stack([xa, xb, pa], axis=1))
    q2 = np.where(use_d1[:, None, None], np.stack([xa, pb, pa], axis=1), np.stack([xb, pb, pa], axis=1))
    lone_side = np.stack([single, degenerate], axis=1)
    quad_side = np.stack([q1, q2], axis=1)

    m = lonely_is_neg[:, None, None, None]
    inside = np.where(m, lone_side, quad_side)
    outside = np.where(m, quad_side, lone_side)

    grad = linear_gradients(coords, values)
    normals = grad / np.linalg.norm(grad, axis=1)[:, None]
    segments = np.stack([pa, pb], axis=1)
    return {"inside": inside, "outside": outside, "segments": segments, "normals": normals}


def linear_gradients(coords: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Gradient of the linear interpolant on each triangle, shape (nc, 2)."""
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    jac = np.stack([e1, e2], axis=1)  # rows are edge vectors
    df = np.stack([values[:, 1] - values[:, 0], values[:, 2] - values[:, 0]], axis=1)
    return np.linalg.solve(jac, df[..., None])[..., 0]


def decompose_cut_cell(cell, values, cell_id: int = -1) -> CutDecomposition:
    """Split a single triangle (3, 2) with vertex values (3,)."""
    cell = np.asarray(cell, dtype=float)
    values = np.asarray(values, dtype=float)
    d = decompose_cut_cells(cell[None], values[None])
    inside = d["inside"][0]
    outside = d["outside"][0]
    keep_in = np.abs(_double_area(inside)) > 0
    keep_out = np.abs(_double_area(outside)) > 0
    return CutDecomposition(
        cell=cell_id,
        inside=inside[keep_in],
        outside=outside[keep_out],
        segment=d["segments"][0],
        normal=d["normals"][0],
    )


def volume_rule(region, order: int) -> QuadratureRule:
    """Rule over a full triangle (3, 2) or the inside part of a decomposition."""
    tris = region.inside if isinstance(region, CutDecomposition) else np.asarray(region, dtype=float)[None]
    pts, w = map_triangles(tris, order)
    return QuadratureRule(pts.reshape(-1, 2), w.ravel())


def surface_rule(decomp: CutDecomposition, order: int, h: float = 1.0) -> QuadratureRule:
    seg = decomp.segment
    if decomp.segment_length < 1e-14 * h:
        return QuadratureRule(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))
    pts, w = map_segments(seg[None], order)
    normals = np.repeat(decomp.normal[None], len(w[0]), axis=0)
    return QuadratureRule(pts[0], w[0], normals)


def face_rule(face_coords, order: int) -> QuadratureRule:
    """Gauss rule on a full face given by its two end points (2, 2)."""
    pts, w = map_segments(np.asarray(face_coords, dtype=float)[None], order)
    return QuadratureRule(pts[0], w[0])


@dataclass
class CellBatch:
    """Quadrature points for a set of cells: ``points`` (nc, nq, 2), ``weights`` (nc, nq)."""

    cells: np.ndarray
    points: np.ndarray
    weights: np.ndarray


@dataclass
class SurfaceBatch:
    cells: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray  # (nc, 2), constant per cut cell


@dataclass
class FaceBatch:
    faces: np.ndarray
    cells0: np.ndarray
    cells1: np.ndarray
    normals: np.ndarray
    points: np.ndarray
    weights: np.ndarray


def full_cell_batch(mesh, cells, order) -> CellBatch:
    cells = np.asarray(cells, dtype=np.int64)
    pts, w = map_triangles(mesh.cell_coords[cells], order)
    return CellBatch(cells, pts, w)


def cut_volume_batch(cells, inside, order) -> CellBatch:
    """inside: (nc, 2, 3, 2) sub-triangles (padding has zero area)."""
    pts, w = map_triangles(inside, order)
    nc = len(cells)
    return CellBatch(np.asarray(cells, dtype=np.int64), pts.reshape(nc, -1, 2), w.reshape(nc, -1))


def interface_batch(cells, segments, normals, order, h) -> SurfaceBatch:
    pts, w = map_segments(segments, order)
    length = np.linalg.norm(segments[:, 1] - segments[:, 0], axis=1)
    w = np.where((length < 1e-14 * h)[:, None], 0.0, w)
    return SurfaceBatch(np.asarray(cells, dtype=np.int64), pts, w, normals)


def face_batch(mesh, faces, order) -> FaceBatch:
    faces = np.asarray(faces, dtype=np.int64)
    pts, w = map_segments(mesh.vertices[mesh.faces[faces]], order)
    fc = mesh.face_cells[faces]
    return FaceBatch(faces, fc[:, 0], fc[:, 1], mesh.face_normals[faces], pts, w)
