"""Velocity/pressure element pairs restricted to the active mesh.

Local shape functions are stored per cell as coefficients in the scaled
monomial basis ``((x - x_T) / h_T)^a ((y - y_T) / h_T)^b``. Derivatives of
any order, evaluated anywhere (including on a neighbour's face), then come
for free, which is what the derivative-jump ghost penalties need.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from .cutquad import full_cell_batch
from .errors import ConstraintUndefinedError, InvalidArgumentError, OutOfDomainError
from .mesh import LOCAL_FACES


@lru_cache(maxsize=None)
def monomials(degree: int) -> tuple:
    return tuple((a, t - a) for t in range(degree + 1) for a in range(t, -1, -1))


def _falling(n, k):
    out = 1
    for i in range(k):
        out *= n - i
    return out


def monomial_derivatives(xi: np.ndarray, degree: int, dx: int = 0, dy: int = 0) -> np.ndarray:
    """``d^dx/dxi^dx d^dy/deta^dy`` of every monomial at scaled points (..., 2)."""
    mons = monomials(degree)
    px = [np.ones(xi.shape[:-1])]
    py = [np.ones(xi.shape[:-1])]
    for _ in range(degree):
        px.append(px[-1] * xi[..., 0])
        py.append(py[-1] * xi[..., 1])
    out = np.zeros(xi.shape[:-1] + (len(mons),))
    for j, (a, b) in enumerate(mons):
        if a < dx or b < dy:
            continue
        out[..., j] = _falling(a, dx) * _falling(b, dy) * px[a - dx] * py[b - dy]
    return out


def lattice(k: int) -> np.ndarray:
    """Barycentric-free lattice points (i/k, j/k) of the unit triangle."""
    pts = [(i / k, j / k) for j in range(k + 1) for i in range(k + 1 - j)]
    return np.array(pts)


class Element:
    """Scalar element on triangles."""

    name = "element"
    degree = 0
    nloc = 0
    continuous = True

    def entity_dofs(self):
        """Return dofs per (vertex, edge, cell)."""
        raise NotImplementedError

    def coefficients(self, coords: np.ndarray, vids: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def nodes(self, coords: np.ndarray, vids: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


def _scaled(points, centers, scales):
    return (points - centers[:, None, :]) / scales[:, None, None]


class Lagrange(Element):
    def __init__(self, k: int):
        if k < 0:
            raise InvalidArgumentError("Lagrange degree must be >= 0")
        self.k = k
        self.degree = k
        self.continuous = k >= 1
        self.nloc = (k + 1) * (k + 2) // 2
        self.name = f"P{k}" if k else "P0"

    def entity_dofs(self):
        k = self.k
        if k == 0:
            return 0, 0, 1
        return 1, k - 1, (k - 1) * (k - 2) // 2

    def nodes(self, coords, vids):
        k = self.k
        nc = len(coords)
        if k == 0:
            return coords.mean(axis=1)[:, None, :]
        out = [coords[:, i] for i in range(3)]
        for i in range(3):
            a, b = LOCAL_FACES[i]
            flip = vids[:, a] > vids[:, b]
            start = np.where(flip[:, None], coords[:, b], coords[:, a])
            end = np.where(flip[:, None], coords[:, a], coords[:, b])
            for j in range(1, k):
                out.append(start + (j / k) * (end - start))
        v0 = coords[:, 0]
        e1 = coords[:, 1] - v0
        e2 = coords[:, 2] - v0
        for j in range(1, k):
            for i in range(1, k - j):
                out.append(v0 + (i / k) * e1 + (j / k) * e2)
        nodes = np.stack(out, axis=1)
        assert nodes.shape == (nc, self.nloc, 2)
        return nodes

    def coefficients(self, coords, vids, centers, scales):
        if self.k == 0:
            return np.ones((len(coords), 1, 1))
        nodes = _scaled(self.nodes(coords, vids), centers, scales)
        vand = monomial_derivatives(nodes, self.k)  # (nc, nloc, nmono)
        return np.linalg.inv(vand)


class Mini(Element):
    """P1 plus the cubic bubble ``lambda_0 lambda_1 lambda_2`` (unnormalised)."""

    name = "P1+B3"
    degree = 3
    nloc = 4
    continuous = True

    def entity_dofs(self):
        return 1, 0, 1

    def nodes(self, coords, vids):
        return np.concatenate([coords, coords.mean(axis=1)[:, None, :]], axis=1)

    def coefficients(self, coords, vids, centers, scales):
        ref = lattice(3)
        lam = np.column_stack([1 - ref.sum(axis=1), ref[:, 0], ref[:, 1]])
        pts = np.einsum("qi,cid->cqd", lam, coords)
        vand = monomial_derivatives(_scaled(pts, centers, scales), 3)
        values = np.column_stack([lam, lam.prod(axis=1)])  # (10, 4)
        return np.linalg.solve(vand, np.broadcast_to(values, (len(coords),) + values.shape))


@dataclass(frozen=True)
class ElementPair:
    kind: str
    m: int = 2

    def __post_init__(self):
        if self.kind not in ("mini", "taylor_hood", "p3p0"):
            raise InvalidArgumentError(f"unknown element pair {self.kind!r}")
        if self.kind == "taylor_hood" and self.m < 2:
            raise InvalidArgumentError("Taylor-Hood needs m >= 2")

    @classmethod
    def mini(cls):
        return cls("mini", 1)

    @classmethod
    def taylor_hood(cls, m: int = 2):
        return cls("taylor_hood", m)

    @classmethod
    def p3p0(cls):
        return cls("p3p0", 3)

    @classmethod
    def parse(cls, text: str):
        s = str(text).strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        if s == "mini":
            return cls.mini()
        if s in ("p3p0",):
            return cls.p3p0()
        match = re.fullmatch(r"(?:taylorhood|th)\(?(\d*)\)?", s)
        if match:
            return cls.taylor_hood(int(match.group(1) or 2))
        raise InvalidArgumentError(f"unknown element pair {text!r}")

    @property
    def label(self) -> str:
        return {"mini": "Mini", "p3p0": "P3P0"}.get(self.kind, f"TaylorHood({self.m})")

    @property
    def velocity_element(self) -> Element:
        if self.kind == "mini":
            return Mini()
        if self.kind == "p3p0":
            return Lagrange(3)
        return Lagrange(self.m)

    @property
    def pressure_element(self) -> Element:
        if self.kind == "mini":
            return Lagrange(1)
        if self.kind == "p3p0":
            return Lagrange(0)
        return Lagrange(self.m - 1)

    @property
    def m_lower(self) -> int:
        return {"mini": 1, "p3p0": 3}.get(self.kind, self.m)

    @property
    def m_upper(self) -> int:
        return {"mini": 3, "p3p0": 3}.get(self.kind, self.m)

    @property
    def m_q(self) -> int:
        return {"mini": 1, "p3p0": 0}.get(self.kind, self.m - 1)

    @property
    def pressure_continuous(self) -> bool:
        return self.kind != "p3p0"


class DofMap:
    """Degrees of freedom of one element on the active cells of a geometry."""

    def __init__(self, element: Element, geometry, ncomp: int = 1):
        self.element = element
        self.geometry = geometry
        self.mesh = mesh = geometry.mesh
        self.ncomp = ncomp
        self.cells = geometry.active_cells
        self.row_of_cell = -np.ones(mesh.num_cells, dtype=np.int64)
        self.row_of_cell[self.cells] = np.arange(len(self.cells))

        full = self._full_ids(self.cells)
        self.full_ids, inverse = np.unique(full, return_inverse=True)
        self.cell_dofs = inverse.reshape(full.shape)
        self.ndofs = len(self.full_ids)

        coords = mesh.cell_coords[self.cells]
        self.centers = coords.mean(axis=1)
        self.scales = mesh.cell_diameters[self.cells]
        self.coef = element.coefficients(coords, mesh.cells[self.cells], self.centers, self.scales)

    @property
    def size(self) -> int:
        return self.ncomp * self.ndofs

    def _full_ids(self, cells):
        mesh = self.mesh
        nv, nf = mesh.num_vertices, mesh.num_faces
        dv, de, dc = self.element.entity_dofs()
        parts = []
        if dv:
            parts.append(mesh.cells[cells])
        if de:
            # edge nodes are generated starting from the lower vertex id
            for i in range(3):
                fid = mesh.cell_faces[cells, i]
                for j in range(de):
                    parts.append(nv + fid * de + j)
        if dc:
            base = nv + nf * de
            for j in range(dc):
                parts.append(base + cells * dc + j)
        return np.column_stack(parts)

    def rows(self, cells) -> np.ndarray:
        r = self.row_of_cell[np.asarray(cells, dtype=np.int64)]
        if np.any(r < 0):
            raise OutOfDomainError("cell is not active for this space")
        return r

    def global_dofs(self, cells) -> np.ndarray:
        return self.cell_dofs[self.rows(cells)]

    def basis(self, cells, points, dx: int = 0, dy: int = 0) -> np.ndarray:
        """Derivative ``(dx, dy)`` of the local basis at points (nc, nq, 2) -> (nc, nq, nloc)."""
        r = self.rows(cells)
        xi = _scaled(points, self.centers[r], self.scales[r])
        mono = monomial_derivatives(xi, self.element.degree, dx, dy)
        out = np.matmul(mono, self.coef[r])
        if dx + dy:
            out /= self.scales[r][:, None, None] ** (dx + dy)
        return out

    def gradients(self, cells, points) -> np.ndarray:
        """(nc, nq, nloc, 2)."""
        return np.stack([self.basis(cells, points, 1, 0), self.basis(cells, points, 0, 1)], axis=-1)

    def normal_derivative(self, cells, points, normals, k: int) -> np.ndarray:
        """k-th derivative in direction ``normals`` (nc, 2), shape (nc, nq, nloc)."""
        if k == 0:
            return self.basis(cells, points)
        nx = normals[:, 0][:, None, None]
        ny = normals[:, 1][:, None, None]
        out = 0.0
        for i in range(k + 1):
            out = out + comb(k, i) * nx**i * ny ** (k - i) * self.basis(cells, points, i, k - i)
        return out

    def mean_weights(self) -> np.ndarray:
        """Integrals of each basis function over the interior mesh."""
        geom = self.geometry
        inside = geom.inside_cells
        if len(inside) == 0:
            raise ConstraintUndefinedError("no interior cells: pressure mean constraint undefined")
        batch = full_cell_batch(self.mesh, inside, max(self.element.degree, 1))
        vals = self.basis(inside, batch.points)
        local = np.einsum("cq,cqi->ci", batch.weights, vals)
        out = np.zeros(self.ndofs)
        np.add.at(out, self.global_dofs(inside), local)
        return out

    def constant_vector(self) -> np.ndarray:
        """Coefficients of the constant function 1 (Lagrange-type spaces)."""
        return np.ones(self.ndofs)


def build_spaces(pair: ElementPair, geometry, mesh=None):
    """Velocity (vector) and pressure dof maps on the active mesh of ``geometry``."""
    if len(geometry.inside_cells) == 0:
        raise ConstraintUndefinedError("no interior cells: pressure mean constraint undefined")
    V = DofMap(pair.velocity_element, geometry, ncomp=2)
    Q = DofMap(pair.pressure_element, geometry, ncomp=1)
    return V, Q


class FEFunction:
    def __init__(self, dofmap: DofMap, coefficients=None, step: int | None = None):
        self.dofmap = dofmap
        self.step = dofmap.geometry.step if step is None else step
        if coefficients is None:
            coefficients = np.zeros(dofmap.size)
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (dofmap.size,):
            raise InvalidArgumentError(f"expected {dofmap.size} coefficients, got {coefficients.shape}")
        self.coefficients = coefficients

    @property
    def ncomp(self) -> int:
        return self.dofmap.ncomp

    def local(self, cells) -> np.ndarray:
        """Local coefficients (nc, ncomp, nloc)."""
        dm = self.dofmap
        g = dm.global_dofs(cells)
        c = self.coefficients.reshape(dm.ncomp, dm.ndofs)
        return np.stack([c[i][g] for i in range(dm.ncomp)], axis=1)

    def values(self, cells, points) -> np.ndarray:
        """(nc, nq, ncomp)."""
        return np.einsum("cqi,cki->cqk", self.dofmap.basis(cells, points), self.local(cells))

    def gradients(self, cells, points) -> np.ndarray:
        """(nc, nq, ncomp, 2)."""
        return np.einsum("cqid,cki->cqkd", self.dofmap.gradients(cells, points), self.local(cells))

    def derivative(self, cells, points, dx, dy) -> np.ndarray:
        return np.einsum("cqi,cki->cqk", self.dofmap.basis(cells, points, dx, dy), self.local(cells))

    def copy(self) -> "FEFunction":
        return FEFunction(self.dofmap, self.coefficients.copy(), self.step)


def evaluate(f: FEFunction, cell: int, point):
    """Value (ncomp,) and gradient (ncomp, 2) of ``f`` at ``point`` inside ``cell``."""
    if f.dofmap.row_of_cell[cell] < 0:
        raise OutOfDomainError(f"cell {cell} is not active at step {f.step}")
    pts = np.asarray(point, dtype=float).reshape(1, 1, 2)
    cells = np.array([cell])
    return f.values(cells, pts)[0, 0], f.gradients(cells, pts)[0, 0]


def _field_values(field, pts, ncomp):
    vals = np.asarray(field(pts[..., 0], pts[..., 1]), dtype=float)
    if ncomp == 1 and vals.shape == pts.shape[:-1]:
        vals = vals[..., None]
    if vals.shape != pts.shape[:-1] + (ncomp,):
        raise InvalidArgumentError(f"field returned shape {vals.shape}, expected {pts.shape[:-1] + (ncomp,)}")
    return vals


def interpolate(field, dofmap: DofMap) -> FEFunction:
    """Nodal interpolant of ``field(x, y)`` on the active mesh.

    P0 uses cell means; Mini sets the bubble so that the centroid value is
    matched.
    """
    el = dofmap.element
    mesh = dofmap.mesh
    cells = dofmap.cells
    ncomp = dofmap.ncomp
    coords = mesh.cell_coords[cells]
    out = np.zeros((ncomp, dofmap.ndofs))
    if isinstance(el, Lagrange) and el.k == 0:
        batch = full_cell_batch(mesh, cells, 4)
        vals = _field_values(field, batch.points, ncomp)
        means = np.einsum("cq,cqk->ck", batch.weights, vals) / batch.weights.sum(axis=1)[:, None]
        local = means[:, :, None]
    else:
        nodes = el.nodes(coords, mesh.cells[cells])
        local = np.moveaxis(_field_values(field, nodes, ncomp), -1, 1)  # (nc, ncomp, nloc)
        if isinstance(el, Mini):
            local[:, :, 3] = 27.0 * (local[:, :, 3] - local[:, :, :3].mean(axis=2))
    for k in range(ncomp):
        out[k][dofmap.cell_dofs] = local[:, k, :]
    return FEFunction(dofmap, out.ravel())


def apply_pressure_mean(p: FEFunction, dofmap: DofMap | None = None, weights=None) -> FEFunction:
    """Shift ``p`` by a constant so that its integral over the interior mesh vanishes."""
    dm = dofmap or p.dofmap
    w = dm.mean_weights() if weights is None else weights
    total = w.sum()
    if total <= 0:
        raise ConstraintUndefinedError("interior area is zero")
    shift = float(w @ p.coefficients) / total
    return FEFunction(p.dofmap, p.coefficients - shift * dm.constant_vector(), p.step)


def transfer(f: FEFunction, target: DofMap) -> FEFunction:
    """Re-index ``f`` onto another active set of the same background mesh.

    Dofs that are new in ``target`` get zero; those never matter on cells
    that were active for ``f``.
    """
    src = f.dofmap
    pos = np.searchsorted(src.full_ids, target.full_ids)
    pos = np.minimum(pos, src.ndofs - 1)
    found = src.full_ids[pos] == target.full_ids
    c = f.coefficients.reshape(src.ncomp, src.ndofs)
    out = np.zeros((target.ncomp, target.ndofs))
    out[:, found] = c[:, pos[found]]
    return FEFunction(target, out.ravel())
