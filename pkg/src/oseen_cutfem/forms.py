"""Sparse assembly of the unfitted Oseen forms on one active geometry.

All velocity forms act componentwise, so they are assembled once for a
scalar space and replicated on the two diagonal blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import cutquad
from .errors import AssemblyError, EvaluationError


@dataclass(frozen=True)
class Penalties:
    eta: float | None = None  # None -> 10 * m_upper**2
    gamma_s: float = 1.0
    gamma_J: float = 1.0
    nu: float = 1.0
    skew: bool = False

    def eta_for(self, pair) -> float:
        return float(self.eta) if self.eta is not None else 10.0 * pair.m_upper**2


def _coo(rows_dofs, cols_dofs, local, shape):
    nc, nr = rows_dofs.shape
    nl = cols_dofs.shape[1]
    r = np.broadcast_to(rows_dofs[:, :, None], (nc, nr, nl)).ravel()
    c = np.broadcast_to(cols_dofs[:, None, :], (nc, nr, nl)).ravel()
    return sp.csr_matrix((local.ravel(), (r, c)), shape=shape)


def _scatter(dofs, local, n):
    out = np.zeros(n)
    np.add.at(out, dofs.ravel(), local.ravel())
    return out


def _checked(values, what):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluationError(f"{what} returned non-finite values")
    return values


class Assembler:
    """Quadrature caches and form assembly for one ``(geometry, V, Q)`` triple."""

    def __init__(self, geometry, V, Q, pair, penalties: Penalties | None = None):
        self.geometry = geometry
        self.mesh = geometry.mesh
        self.V = V
        self.Q = Q
        self.pair = pair
        self.penalties = penalties or Penalties()
        self.h = geometry.mesh.h
        self.eta = self.penalties.eta_for(pair)
        self.order_v = 2 * pair.m_upper
        self.order_q = max(2 * pair.m_q, 1)
        self.order_vq = pair.m_upper + pair.m_q

    # quadrature -----------------------------------------------------------
    def volume_batches(self, order):
        geom = self.geometry
        batches = []
        if len(geom.inside_cells):
            batches.append(cutquad.full_cell_batch(self.mesh, geom.inside_cells, order))
        if len(geom.cut_cells):
            batches.append(cutquad.cut_volume_batch(geom.cut_cells, geom.preview.decomposition["inside"], order))
        return batches

    def interface_batch(self, order):
        geom = self.geometry
        dec = geom.preview.decomposition
        return cutquad.interface_batch(geom.cut_cells, dec["segments"], dec["normals"], order, self.h)

    def active_batch(self, order, cells=None):
        cells = self.geometry.active_cells if cells is None else cells
        return cutquad.full_cell_batch(self.mesh, cells, order)

    def face_batch(self, faces, order):
        return cutquad.face_batch(self.mesh, faces, order)

    # scalar building blocks ----------------------------------------------
    def _cell_matrix(self, dm_r, dm_c, batches, kernel):
        mat = sp.csr_matrix((dm_r.ndofs, dm_c.ndofs))
        for b in batches:
            if len(b.cells) == 0:
                continue
            local = kernel(b)
            mat = mat + _coo(dm_r.global_dofs(b.cells), dm_c.global_dofs(b.cells), local, mat.shape)
        return mat

    def scalar_mass(self, dm, batches):
        def k(b):
            phi = dm.basis(b.cells, b.points)
            return np.einsum("cq,cqi,cqj->cij", b.weights, phi, phi)
        return self._cell_matrix(dm, dm, batches, k)

    def scalar_stiffness(self, dm, batches):
        def k(b):
            g = dm.gradients(b.cells, b.points)
            return np.einsum("cq,cqid,cqjd->cij", b.weights, g, g)
        return self._cell_matrix(dm, dm, batches, k)

    def scalar_convection(self, dm, batches, w, t, skew=False):
        def k(b):
            wv = _checked(w(b.points[..., 0], b.points[..., 1], t), "transport field")
            phi = dm.basis(b.cells, b.points)
            dphi = np.einsum("cqd,cqjd->cqj", wv, dm.gradients(b.cells, b.points))
            loc = np.einsum("cq,cqi,cqj->cij", b.weights, phi, dphi)
            if skew:
                loc = 0.5 * (loc - np.swapaxes(loc, 1, 2))
            return loc
        return self._cell_matrix(dm, dm, batches, k)

    def scalar_nitsche(self, dm, sb, eta):
        h = self.h

        def k(b):
            phi = dm.basis(b.cells, b.points)
            dn = np.einsum("cqjd,cd->cqj", dm.gradients(b.cells, b.points), b.normals)
            cons = np.einsum("cq,cqi,cqj->cij", b.weights, phi, dn)
            pen = np.einsum("cq,cqi,cqj->cij", b.weights, phi, phi)
            return -(cons + np.swapaxes(cons, 1, 2)) + (eta / h) * pen
        return self._cell_matrix(dm, dm, [sb], k)

    def scalar_surface_mass(self, dm, sb):
        def k(b):
            phi = dm.basis(b.cells, b.points)
            return np.einsum("cq,cqi,cqj->cij", b.weights, phi, phi)
        return self._cell_matrix(dm, dm, [sb], k)

    def scalar_surface_gradient(self, dm, sb):
        def k(b):
            g = dm.gradients(b.cells, b.points)
            return np.einsum("cq,cqid,cqjd->cij", b.weights, g, g)
        return self._cell_matrix(dm, dm, [sb], k)

    def face_jump_matrix(self, dm, faces, orders_weights, order):
        """Sum over faces of ``weight_k * int_F [d^k_n u][d^k_n v]``."""
        n = dm.ndofs
        if len(faces) == 0:
            return sp.csr_matrix((n, n))
        fb = self.face_batch(faces, order)
        dofs = np.concatenate([dm.global_dofs(fb.cells0), dm.global_dofs(fb.cells1)], axis=1)
        local = 0.0
        for k, weight in orders_weights:
            d0 = dm.normal_derivative(fb.cells0, fb.points, fb.normals, k)
            d1 = dm.normal_derivative(fb.cells1, fb.points, fb.normals, k)
            jump = np.concatenate([d0, -d1], axis=2)
            local = local + weight * np.einsum("cq,cqi,cqj->cij", fb.weights, jump, jump)
        return _coo(dofs, dofs, local, (n, n))

    # ghost penalty weights ---------------------------------------------------
    def ghost_s_weights(self):
        h = self.h
        return [(k, h ** (2 * k - 1)) for k in range(1, self.pair.m_upper + 1)]

    def ghost_J_weights(self):
        h = self.h
        return [(k, h ** (2 * k + 1)) for k in range(0, self.pair.m_q + 1)]

    @cached_property
    def ghost_s_scalar(self):
        return self.face_jump_matrix(self.V, self.geometry.faces_ghost, self.ghost_s_weights(), self.order_v)

    @cached_property
    def ghost_J(self):
        return self.face_jump_matrix(self.Q, self.geometry.faces_ghost, self.ghost_J_weights(), self.order_q)

    @cached_property
    def mass_scalar(self):
        return self.scalar_mass(self.V, self.volume_batches(self.order_v))

    @cached_property
    def stiffness_scalar(self):
        return self.scalar_stiffness(self.V, self.volume_batches(self.order_v))

    @cached_property
    def nitsche_scalar(self):
        if len(self.geometry.cut_cells) == 0:
            raise AssemblyError("no cut cells: interface quadrature missing")
        return self.scalar_nitsche(self.V, self.interface_batch(self.order_v), self.eta)

    def a_scalar(self, w=None, t=0.0):
        pen = self.penalties
        mat = pen.nu * (self.stiffness_scalar + self.nitsche_scalar + pen.gamma_s * self.ghost_s_scalar)
        if w is not None:
            mat = mat + self.scalar_convection(self.V, self.volume_batches(self.order_v), w, t, pen.skew)
        return mat.tocsr()

    def b_matrix(self):
        """Rows: pressure dofs; columns: velocity dofs (both components)."""
        V, Q = self.V, self.Q
        order = self.order_vq
        blocks = []
        for d in range(2):
            def k(b, d=d):
                psi = Q.basis(b.cells, b.points)
                dphi = V.basis(b.cells, b.points, 1 - d, d)
                return np.einsum("cq,cqi,cqj->cij", b.weights, psi, dphi)
            vol = self._cell_matrix(Q, V, self.volume_batches(order), k)
            sb = self.interface_batch(order)

            def ks(b, d=d):
                psi = Q.basis(b.cells, b.points)
                phi = V.basis(b.cells, b.points)
                return np.einsum("cq,c,cqi,cqj->cij", b.weights, b.normals[:, d], psi, phi)
            surf = self._cell_matrix(Q, V, [sb], ks)
            blocks.append(vol - surf)
        return sp.hstack(blocks).tocsr()

    # assembled operators ----------------------------------------------------
    def assemble_a(self, w=None, t=0.0):
        ks = self.a_scalar(w, t)
        return sp.block_diag([ks, ks], format="csr")

    def assemble_b(self):
        return self.b_matrix()

    def assemble_ghost_s(self):
        s = self.ghost_s_scalar
        return sp.block_diag([s, s], format="csr")

    def assemble_ghost_J(self):
        return self.ghost_J

    def assemble_mass(self):
        m = self.mass_scalar
        return sp.block_diag([m, m], format="csr")

    def mean_row(self):
        return self.Q.mean_weights()

    def assemble_rhs(self, f=None, g=None, t=0.0):
        """Velocity and pressure load vectors for forcing ``f`` and boundary data ``g``."""
        V, Q = self.V, self.Q
        fu = np.zeros(V.size)
        gq = np.zeros(Q.size)
        nv = V.ndofs
        if f is not None:
            for b in self.volume_batches(self.order_v + 2):
                fv = _checked(f(b.points[..., 0], b.points[..., 1], t), "forcing")
                phi = V.basis(b.cells, b.points)
                dofs = V.global_dofs(b.cells)
                for d in range(2):
                    loc = np.einsum("cq,cq,cqi->ci", b.weights, fv[..., d], phi)
                    fu[d * nv:(d + 1) * nv] += _scatter(dofs, loc, nv)
        if g is not None and len(self.geometry.cut_cells):
            sb = self.interface_batch(self.order_v + 2)
            gv = _checked(g(sb.points[..., 0], sb.points[..., 1], t), "boundary data")
            phi = V.basis(sb.cells, sb.points)
            dn = np.einsum("cqjd,cd->cqj", V.gradients(sb.cells, sb.points), sb.normals)
            dofs = V.global_dofs(sb.cells)
            nu = self.penalties.nu
            for d in range(2):
                loc = nu * np.einsum("cq,cq,cqi->ci", sb.weights, gv[..., d], (self.eta / self.h) * phi - dn)
                fu[d * nv:(d + 1) * nv] += _scatter(dofs, loc, nv)
            gn = np.einsum("cqd,cd->cq", gv, sb.normals)
            psi = Q.basis(sb.cells, sb.points)
            loc = -np.einsum("cq,cq,cqi->ci", sb.weights, gn, psi)
            gq += _scatter(Q.global_dofs(sb.cells), loc, Q.ndofs)
        return fu, gq

    # norm Gram matrices ------------------------------------------------------
    @cached_property
    def triple_scalar(self):
        """Gram matrix of ``|||v|||^2`` on the discrete domain (scalar)."""
        sb = self.interface_batch(self.order_v)
        return (self.stiffness_scalar + self.scalar_surface_mass(self.V, sb) / self.h
                + self.h * self.scalar_surface_gradient(self.V, sb)).tocsr()

    @cached_property
    def active_stiffness_scalar(self):
        return self.scalar_stiffness(self.V, [self.active_batch(self.order_v)])

    @cached_property
    def active_mass_scalar(self):
        return self.scalar_mass(self.V, [self.active_batch(self.order_v)])

    def triple_norm_matrix(self, extended=False):
        s = self.triple_scalar
        if extended:
            s = s + self.active_stiffness_scalar
        return sp.block_diag([s, s], format="csr")

    def pressure_seminorm_matrix(self, extended=True):
        """Gram matrix of the h-weighted pressure seminorm (interior or extended mesh)."""
        geom, Q, h = self.geometry, self.Q, self.h
        cells = geom.active_cells if extended else geom.inside_cells
        faces = geom.faces_active if extended else geom.faces_interior
        mat = sp.csr_matrix((Q.ndofs, Q.ndofs))
        if len(cells):
            mat = mat + h**2 * self.scalar_stiffness(Q, [self.active_batch(self.order_q, cells)])
        if len(faces):
            mat = mat + self.face_jump_matrix(Q, faces, [(0, h)], self.order_q)
        return mat.tocsr()

    def pressure_mass(self, region="domain"):
        Q = self.Q
        if region == "domain":
            return self.scalar_mass(Q, self.volume_batches(self.order_q))
        if region == "interior":
            return self.scalar_mass(Q, [self.active_batch(self.order_q, self.geometry.inside_cells)])
        if region == "active":
            return self.scalar_mass(Q, [self.active_batch(self.order_q)])
        raise ValueError(region)

    def pressure_surface_mass(self):
        return self.scalar_surface_mass(self.Q, self.interface_batch(self.order_q))


def block2(m):
    return sp.block_diag([m, m], format="csr")
