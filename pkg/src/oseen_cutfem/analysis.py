"""Norms, error reports and numerical stability checks.

The checks measure the constants that the error analysis treats as
generic: inf-sup type constants of the three element pairs, coercivity of
the Nitsche form, a discrete trace constant, norm equivalences and the
per-step energy inequality. Rates of convergence are fitted from runs of
the time stepper against manufactured solutions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from . import cutquad
from . import geometry as geo
from .errors import InvalidArgumentError
from .fespace import FEFunction, build_spaces, transfer
from .forms import Assembler, Penalties
from .linalg import BorderedFactor
from .mesh import LOCAL_FACES

log = logging.getLogger(__name__)

DENSE_LIMIT = 6000


def _qf(mat, x):
    """Non-negative quadratic form ``x^T mat x``."""
    return max(float(x @ (mat @ x)), 0.0)


def _sqrt(v):
    return math.sqrt(max(v, 0.0))


# ---------------------------------------------------------------------------
# norm reports
@dataclass
class NormReport:
    step: int
    l2: float = 0.0
    triple: float = 0.0
    triple_ext: float = 0.0
    ghost_s: float = 0.0
    p_seminorm: float = math.nan
    p_seminorm_ext: float = math.nan
    ghost_J: float = math.nan

    def as_dict(self, prefix=""):
        keys = ["l2", "triple", "triple_ext", "ghost_s", "p_seminorm", "p_seminorm_ext", "ghost_J"]
        return {prefix + k: getattr(self, k) for k in keys}


def compute_norms(asm: Assembler, u=None, p=None, step: int = 0) -> NormReport:
    """All discrete norms of a velocity/pressure pair from the assembled Gram matrices."""
    rep = NormReport(step)
    if u is not None:
        c = u.coefficients if isinstance(u, FEFunction) else np.asarray(u)
        rep.l2 = _sqrt(_qf(asm.assemble_mass(), c))
        rep.triple = _sqrt(_qf(asm.triple_norm_matrix(), c))
        rep.triple_ext = _sqrt(_qf(asm.triple_norm_matrix(extended=True), c))
        rep.ghost_s = _sqrt(_qf(asm.assemble_ghost_s(), c))
    if p is not None:
        c = p.coefficients if isinstance(p, FEFunction) else np.asarray(p)
        rep.p_seminorm = _sqrt(_qf(asm.pressure_seminorm_matrix(extended=False), c))
        rep.p_seminorm_ext = _sqrt(_qf(asm.pressure_seminorm_matrix(extended=True), c))
        rep.ghost_J = _sqrt(_qf(asm.ghost_J, c))
    return rep


def _cached(asm, name, build):
    store = asm.__dict__.setdefault("_analysis_cache", {})
    if name not in store:
        store[name] = build()
    return store[name]


def error_norms(asm: Assembler, u: FEFunction, p: FEFunction | None, exact, t: float) -> dict:
    """Errors of ``(u, p)`` against ``exact`` at time ``t`` by direct quadrature.

    Returns squared-root norms: ``l2`` on the discrete domain, ``triple``
    (Nitsche norm), ``triple_ext`` and the extended pressure seminorm
    ``p_ext`` (nan when ``p`` is None).
    """
    order = min(2 * asm.pair.m_upper + 2, cutquad.MAX_ORDER)
    h = asm.h
    l2 = grad = 0.0
    for b in asm.volume_batches(order):
        x, y = b.points[..., 0], b.points[..., 1]
        e = exact.velocity(x, y, t) - u.values(b.cells, b.points)
        ge = exact.velocity_gradient(x, y, t) - u.gradients(b.cells, b.points)
        l2 += float(np.einsum("cq,cqk,cqk->", b.weights, e, e))
        grad += float(np.einsum("cq,cqkd,cqkd->", b.weights, ge, ge))
    sb = asm.interface_batch(order)
    x, y = sb.points[..., 0], sb.points[..., 1]
    e = exact.velocity(x, y, t) - u.values(sb.cells, sb.points)
    ge = exact.velocity_gradient(x, y, t) - u.gradients(sb.cells, sb.points)
    gam = float(np.einsum("cq,cqk,cqk->", sb.weights, e, e))
    gam_grad = float(np.einsum("cq,cqkd,cqkd->", sb.weights, ge, ge))
    triple2 = grad + gam / h + h * gam_grad

    ab = asm.active_batch(order)
    x, y = ab.points[..., 0], ab.points[..., 1]
    ge = exact.velocity_gradient(x, y, t) - u.gradients(ab.cells, ab.points)
    ext2 = float(np.einsum("cq,cqkd,cqkd->", ab.weights, ge, ge)) + triple2

    out = {"l2": _sqrt(l2), "triple": _sqrt(triple2), "triple_ext": _sqrt(ext2), "p_ext": math.nan}
    if p is not None:
        qorder = min(2 * asm.pair.m_q + 2, cutquad.MAX_ORDER)
        ab = asm.active_batch(qorder)
        x, y = ab.points[..., 0], ab.points[..., 1]
        gp = exact.pressure_gradient(x, y, t) - p.gradients(ab.cells, ab.points)[:, :, 0, :]
        cells_part = h * h * float(np.einsum("cq,cqd,cqd->", ab.weights, gp, gp))
        faces_part = h * face_jump_squared(asm.Q, p.coefficients, asm.geometry.faces_active, qorder, asm.mesh)
        out["p_ext"] = _sqrt(cells_part + faces_part)
    return out


def face_jump_squared(dm, coefficients, faces, order, mesh, k: int = 0) -> float:
    """``sum_F int_F [d^k_n f]^2`` evaluated face by face."""
    if len(faces) == 0:
        return 0.0
    fb = cutquad.face_batch(mesh, faces, order)
    c = np.asarray(coefficients).reshape(dm.ncomp, dm.ndofs)
    d0 = dm.normal_derivative(fb.cells0, fb.points, fb.normals, k)
    d1 = dm.normal_derivative(fb.cells1, fb.points, fb.normals, k)
    g0, g1 = dm.global_dofs(fb.cells0), dm.global_dofs(fb.cells1)
    total = 0.0
    for comp in range(dm.ncomp):
        jump = np.einsum("fqi,fi->fq", d0, c[comp][g0]) - np.einsum("fqi,fi->fq", d1, c[comp][g1])
        total += float(np.einsum("fq,fq->", fb.weights, jump * jump))
    return total


def ghost_seminorms_direct(asm: Assembler, u=None, p=None):
    """``|u|_s^2`` and ``|p|_J^2`` from face-wise jumps (no assembled matrix)."""
    geom = asm.geometry
    s2 = j2 = 0.0
    if u is not None:
        c = u.coefficients if isinstance(u, FEFunction) else u
        for k, wgt in asm.ghost_s_weights():
            s2 += wgt * face_jump_squared(asm.V, c, geom.faces_ghost, asm.order_v, asm.mesh, k)
    if p is not None:
        c = p.coefficients if isinstance(p, FEFunction) else p
        for k, wgt in asm.ghost_J_weights():
            j2 += wgt * face_jump_squared(asm.Q, c, geom.faces_ghost, asm.order_q, asm.mesh, k)
    return s2, j2


def state_norm_row(state, exact=None) -> dict:
    """One CSV row worth of norms (and errors if ``exact`` is given) for a time step state."""
    asm = state.assembler
    rep = compute_norms(asm, state.u, state.p, state.n)
    row = {"u_l2": rep.l2, "u_triple": rep.triple, "u_triple_ext": rep.triple_ext, "u_ghost": rep.ghost_s,
           "p_seminorm": rep.p_seminorm, "p_seminorm_ext": rep.p_seminorm_ext, "p_ghost": rep.ghost_J}
    if exact is not None:
        err = error_norms(asm, state.u, state.p, exact, state.t)
        row.update({"err_u_l2": err["l2"], "err_u_triple": err["triple"],
                    "err_u_triple_ext": err["triple_ext"], "err_p_ext": err["p_ext"]})
    return row


def error_report(state, exact) -> NormReport:
    err = error_norms(state.assembler, state.u, state.p, exact, state.t)
    return NormReport(state.n, l2=err["l2"], triple=err["triple"], triple_ext=err["triple_ext"],
                      p_seminorm_ext=err["p_ext"])


# ---------------------------------------------------------------------------
# reports
@dataclass
class StabilityReport:
    check: str
    constant: float
    min: float
    max: float
    passed: bool
    details: dict = field(default_factory=dict)

    def row(self):
        return {"check": self.check, "constant": self.constant, "min": self.min, "max": self.max,
                "pass": int(bool(self.passed))}


def write_reports_csv(path, reports):
    from .stepper import write_csv
    return write_csv(path, [r.row() for r in reports], ["check", "constant", "min", "max", "pass"])


# ---------------------------------------------------------------------------
# energy inequality
def energy_step_terms(cur, prev) -> dict:
    """Terms of the per-step energy inequality for a zero-forcing BDF1 step."""
    asm = cur.assembler
    pen = asm.penalties
    dt = cur.t - prev.t
    u = cur.u.coefficients
    uo = prev.u.coefficients if prev.u.dofmap is asm.V else transfer(prev.u, asm.V).coefficients
    M = asm.assemble_mass()
    un2 = _qf(M, u)
    uo2 = _qf(M, uo)
    d2 = _qf(M, u - uo)
    tri = _qf(asm.triple_norm_matrix(), u)
    s2, j2 = ghost_seminorms_direct(asm, cur.u, cur.p)
    lhs = un2 + d2 + dt * (0.5 * tri + (2 * pen.gamma_s - 0.5) * s2 + 2 * pen.gamma_J * j2)
    scale = max(uo2, lhs, 1e-300)
    return {"energy_lhs": lhs, "energy_rhs": uo2, "energy_slack": uo2 - lhs, "energy_scale": scale}


def check_energy_inequality(rows, tol: float = 1e-10) -> StabilityReport:
    """Per-step energy inequality over a trajectory's rows (from ``stepper.run`` with the energy monitor)."""
    rel = []
    for r in rows:
        if "energy_slack" in r and r["n"] > 0:
            rel.append(r["energy_slack"] / r["energy_scale"])
    rel = np.array(rel) if rel else np.zeros(1)
    ok = bool(np.all(rel >= -tol))
    return StabilityReport("energy", float(rel.min()), float(rel.min()), float(rel.max()), ok,
                           {"relative_slack": rel.tolist()})


# ---------------------------------------------------------------------------
# inf-sup constructions
def interior_edge_faces(geom) -> np.ndarray:
    """Faces shared by two INSIDE cells."""
    return geom.faces_interior


def reduced_interior_cells(geom) -> np.ndarray:
    """INSIDE cells all of whose edges are shared with another INSIDE cell."""
    mesh = geom.mesh
    interior = np.zeros(mesh.num_faces, dtype=bool)
    interior[geom.faces_interior] = True
    cells = geom.inside_cells
    return cells[interior[mesh.cell_faces[cells]].all(axis=1)]


def assumption_seminorm_matrix(asm: Assembler) -> sp.csr_matrix:
    """Gram matrix of the interior pressure seminorm used by the inf-sup constructions.

    For Taylor-Hood the interior mesh is reduced to cells whose three edges
    are all interior edges.
    """
    def build():
        if asm.pair.kind != "taylor_hood":
            return asm.pressure_seminorm_matrix(extended=False)
        cells = reduced_interior_cells(asm.geometry)
        mat = sp.csr_matrix((asm.Q.ndofs, asm.Q.ndofs))
        if len(cells):
            mat = asm.h**2 * asm.scalar_stiffness(asm.Q, [asm.active_batch(asm.order_q, cells)])
        return mat.tocsr()
    return _cached(asm, "assumption_seminorm", build)


def _edge_stretch(mesh, cells):
    """Smallest eigenvalue of ``sum_e e e^T`` over the given cells."""
    x = mesh.cell_coords[cells]
    edges = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    mats = np.einsum("cei,cej->cij", edges, edges)
    return float(np.linalg.eigvalsh(mats)[:, 0].min())


def construct_infsup_candidate(pair, asm: Assembler, q: FEFunction) -> FEFunction:
    """Velocity paired with ``q`` by the element-specific inf-sup construction.

    The result is supported on the interior mesh and normalised so that
    ``b(v, q)`` equals the interior pressure seminorm squared for the
    lowest-order cases.
    """
    if pair != asm.pair or q.dofmap is not asm.Q:
        raise InvalidArgumentError("pressure function does not belong to this element pair/space")
    geom, mesh, V, h = asm.geometry, asm.mesh, asm.V, asm.h
    nv = V.ndofs
    out = np.zeros((2, nv))
    cells = geom.inside_cells
    if pair.kind == "mini":
        # v|_T = -60 h^2 b_T grad q with the unnormalised cubic bubble
        ctr = mesh.cell_coords[cells].mean(axis=1)[:, None, :]
        gq = q.gradients(cells, ctr)[:, 0, 0, :]
        bub = V.global_dofs(cells)[:, 3]
        for d in range(2):
            out[d][bub] = -60.0 * h * h * gq[:, d]
    elif pair.kind == "taylor_hood":
        out = _taylor_hood_candidate(asm, q)
    else:
        out = _p3p0_candidate(asm, q)
    return FEFunction(V, out.ravel(), step=q.step)


def _taylor_hood_candidate(asm, q):
    geom, mesh, V, h = asm.geometry, asm.mesh, asm.V, asm.h
    nv = V.ndofs
    out = np.zeros((2, nv))
    interior = np.zeros(mesh.num_faces, dtype=bool)
    interior[geom.faces_interior] = True
    cells = geom.inside_cells
    if len(cells) == 0:
        return out
    kappa = 3.0 * h * h / _edge_stretch(mesh, cells)
    coords = mesh.cell_coords[cells]
    el = V.element
    nodes = el.nodes(coords, mesh.cells[cells])  # (nc, nloc, 2)
    # barycentric coordinates of the nodes
    v0 = coords[:, 0]
    jac = np.stack([coords[:, 1] - v0, coords[:, 2] - v0], axis=2)  # columns are edges
    ref = np.linalg.solve(jac[:, None], (nodes - v0[:, None])[..., None])[..., 0]
    lam = np.concatenate([1 - ref.sum(axis=2, keepdims=True), ref], axis=2)  # (nc, nloc, 3)
    gq = q.gradients(cells, nodes)[:, :, 0, :]  # (nc, nloc, 2)
    vals = np.zeros(nodes.shape)
    for i, (a, b) in enumerate(LOCAL_FACES):
        edge = coords[:, b] - coords[:, a]
        he = np.linalg.norm(edge, axis=1)
        te = edge / he[:, None]
        on = interior[mesh.cell_faces[cells, i]]
        bubble = 4.0 * lam[:, :, a] * lam[:, :, b]
        tang = np.einsum("cqd,cd->cq", gq, te)
        coef = -kappa * he**2 * on
        vals += (coef[:, None] * bubble * tang)[:, :, None] * te[:, None, :]
    dofs = V.global_dofs(cells)
    for d in range(2):
        out[d][dofs] = vals[:, :, d]
    return out


def _p3p0_candidate(asm, q):
    geom, mesh, V, h = asm.geometry, asm.mesh, asm.V, asm.h
    out = np.zeros((2, V.ndofs))
    faces = geom.faces_interior
    if len(faces) == 0:
        return out
    c0 = mesh.face_cells[faces, 0]
    c1 = mesh.face_cells[faces, 1]
    qc = q.coefficients
    jump = qc[asm.Q.global_dofs(c0)[:, 0]] - qc[asm.Q.global_dofs(c1)[:, 0]]
    # two cubic edge nodes per face; their 1D shape functions integrate to 3/8 of the length each
    val = (4.0 / 3.0) * h * jump
    nvtx = mesh.num_vertices
    for j in range(2):
        full = nvtx + faces * 2 + j
        pos = np.searchsorted(V.full_ids, full)
        for d in range(2):
            out[d][pos] = val * mesh.face_normals[faces, d]
    return out


def _random_pressures(asm, count, rng):
    return [FEFunction(asm.Q, rng.standard_normal(asm.Q.ndofs)) for _ in range(count)]


def _scalar_solver(mat):
    return splu(sp.csc_matrix(mat))


def _smallest_pencil_eig(K, Mb, pin, k=1):
    """Smallest eigenvalues of ``K x = lam Mb x`` near zero by shift-invert Lanczos.

    ``K`` is bordered by the mean constraint in its last row and column.
    """
    lu = BorderedFactor(K, pin)
    op = LinearOperator(K.shape, matvec=lu.solve, dtype=float)
    vals = eigsh(K, k=k, M=Mb, sigma=0.0, which="LM", OPinv=op, return_eigenvectors=False)
    return np.sort(vals)


def infsup_theta(asm: Assembler, method: str = "sparse") -> float:
    """``theta`` with ``theta^2 = min (B N'^{-1} B^T + J) / M_p`` over interior-mean-free pressures.

    ``N'`` is the Gram matrix of the extended velocity norm and ``M_p`` the
    pressure mass on the discrete domain. Uses the sum of squares instead of
    the sum of the two square roots, which changes the constant by at most
    a factor sqrt(2). ``method="dense"`` forms the Schur complement explicitly.
    """
    Q, V = asm.Q, asm.V
    nq, nv = Q.ndofs, V.ndofs
    B = asm.assemble_b()
    J = asm.penalties.gamma_J * asm.ghost_J
    m = asm.mean_row()
    Mp = asm.pressure_mass("domain")
    if method == "sparse":
        N = asm.triple_norm_matrix(extended=True)
        mcol = sp.csr_matrix(m[:, None])
        K = sp.bmat([[N, -B.T, None], [-B, -J, -mcol], [None, -mcol.T, None]], format="csc")
        Mb = sp.block_diag([sp.csr_matrix((2 * nv, 2 * nv)), Mp, sp.csr_matrix((1, 1))], format="csc")
        lam = _smallest_pencil_eig(-K, Mb, pin=2 * nv)[0]
        return _sqrt(lam)
    lu = _scalar_solver(asm.triple_scalar + asm.active_stiffness_scalar)
    S = J.toarray()
    for d in range(2):
        Bd = B[:, d * nv:(d + 1) * nv].tocsc()
        for start in range(0, nq, 256):
            cols = Bd[start:start + 256].T.toarray()
            S[:, start:start + cols.shape[1]] += Bd @ lu.solve(cols)
    S = 0.5 * (S + S.T)
    one = np.ones(nq)
    P = np.eye(nq) - np.outer(one, m) / (m @ one)
    Mt = P.T @ Mp.toarray() @ P
    scale = np.trace(S) / nq
    Sreg = S + scale * np.outer(one, one) / nq
    lam = sla.eigh(Mt, Sreg, eigvals_only=True, subset_by_index=[nq - 1, nq - 1])[0]
    return float(1.0 / math.sqrt(lam)) if lam > 0 else math.inf


def check_assumption_pair(pair, asm: Assembler, samples: int = 30, seed: int = 0, theta: bool = True) -> dict:
    """Measure the constants of the inf-sup type assumption for one geometry.

    Returns ``c1`` (extended velocity norm over pressure seminorm), ``c3``
    (L2 velocity over ``h`` times seminorm), ``b_slack`` (smallest relative
    value of ``b(v, q) - |||q|||^2``) and ``theta``.
    """
    rng = np.random.default_rng(seed)
    Nq = assumption_seminorm_matrix(asm)
    Next = asm.triple_norm_matrix(extended=True)
    M = asm.assemble_mass()
    B = asm.assemble_b()
    c1 = c3 = 0.0
    slack = math.inf
    for q in _random_pressures(asm, samples, rng):
        v = construct_infsup_candidate(pair, asm, q)
        qn2 = _qf(Nq, q.coefficients)
        if qn2 <= 0:
            continue
        bvq = float(q.coefficients @ (B @ v.coefficients))
        c1 = max(c1, _sqrt(_qf(Next, v.coefficients) / qn2))
        c3 = max(c3, _sqrt(_qf(M, v.coefficients) / qn2) / asm.h)
        slack = min(slack, (bvq - qn2) / qn2)
    out = {"c1": c1, "c3": c3, "b_slack": slack, "b_ok": bool(slack >= -1e-10)}
    if theta:
        out["theta"] = infsup_theta(asm)
    return out


# ---------------------------------------------------------------------------
# coercivity
def _min_eig(mat):
    n = mat.shape[0]
    if n <= DENSE_LIMIT:
        return float(sla.eigh(mat.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    return float(eigsh(mat, k=1, which="SA", return_eigenvectors=False, tol=1e-8)[0])


def _max_abs_eig(mat):
    return float(abs(eigsh(mat, k=1, which="LM", return_eigenvectors=False, tol=1e-6)[0]))


def coercivity_margin(asm: Assembler, w=None, t: float = 0.0, pencil: bool = False) -> dict:
    """Smallest eigenvalue of ``sym(A) - N/2 - gamma_s S`` (one velocity component).

    The form acts identically on both components, so the scalar block has
    the same spectrum as the vector operator. Also returns the largest
    ``alpha`` with ``sym(A) >= alpha (N/2 + gamma_s S)`` when ``pencil`` is set.
    """
    pen = asm.penalties
    A = asm.a_scalar(w, t)
    As = (0.5 * (A + A.T)).tocsr()
    S = pen.nu * pen.gamma_s * asm.ghost_s_scalar
    K = (As - 0.5 * asm.triple_scalar - S).tocsr()
    lam = _min_eig(K)
    normA = _max_abs_eig(As)
    out = {"min_eig": lam, "norm_A": normA, "relative": lam / normA, "passed": bool(lam >= -1e-10 * normA)}
    if pencil and As.shape[0] <= DENSE_LIMIT:
        R = (0.5 * asm.triple_scalar + S).toarray()
        out["alpha"] = float(sla.eigh(As.toarray(), R, eigvals_only=True, subset_by_index=[0, 0])[0])
    return out


# ---------------------------------------------------------------------------
# trace inequality and norm equivalences
def _projected_pencil_max(A, N, m):
    """Largest ``x^T A x / x^T N x`` over ``m``-mean-free ``x`` when ``N 1 = 0``."""
    n = A.shape[0]
    one = np.ones(n)
    P = np.eye(n) - np.outer(one, m) / (m @ one)
    At = P.T @ A @ P
    scale = max(np.trace(N) / n, 1e-300)
    Nreg = N + scale * np.outer(one, one) / n
    return float(sla.eigh(At, Nreg, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])


def trace_constant(asm: Assembler, method: str = "sparse") -> float:
    """``sup h ||q||_Gamma / |||q|||'`` over mean-free pressures."""
    G = asm.pressure_surface_mass()
    N = asm.pressure_seminorm_matrix(extended=True)
    m = asm.mean_row()
    if method == "sparse":
        mcol = sp.csr_matrix(m[:, None])
        K = sp.bmat([[N, mcol], [mcol.T, None]], format="csc")
        Mb = sp.block_diag([G, sp.csr_matrix((1, 1))], format="csc")
        mu = _smallest_pencil_eig(K, Mb, pin=0)[0]
        return asm.h / _sqrt(mu)
    lam = _projected_pencil_max(G.toarray(), N.toarray(), m)
    return asm.h * _sqrt(lam)


def _pencil_range(A, B):
    ev = sla.eigh(A, B, eigvals_only=True)
    return float(ev.min()), float(ev.max())


def norm_equivalence(asm: Assembler) -> dict:
    """Rayleigh quotient ranges of the velocity and pressure norm equivalences."""
    h = asm.h
    out = {}
    Me = asm.active_mass_scalar.toarray()
    M = asm.mass_scalar.toarray()
    S = asm.ghost_s_scalar.toarray()
    out["l2_ext"] = _pencil_range(Me, M + h * h * S)
    Ne = (asm.triple_scalar + asm.active_stiffness_scalar).toarray()
    N = asm.triple_scalar.toarray()
    out["triple_ext"] = _pencil_range(Ne, N + S)
    Qe = asm.pressure_seminorm_matrix(extended=True).toarray()
    Qi = asm.pressure_seminorm_matrix(extended=False).toarray() + asm.ghost_J.toarray()
    nq = Qe.shape[0]
    Z = sla.null_space(np.ones((1, nq)))
    out["pressure_ext"] = _pencil_range(Z.T @ Qe @ Z, Z.T @ Qi @ Z)
    return out


def poincare_constant(asm: Assembler) -> float:
    """``c_P`` with ``||v||_{Omega_h} <= c_P |||v|||`` (scalar component)."""
    M = asm.mass_scalar.toarray()
    N = asm.triple_scalar.toarray()
    lam = sla.eigh(M, N, eigvals_only=True, subset_by_index=[M.shape[0] - 1, M.shape[0] - 1])[0]
    return _sqrt(lam)


# ---------------------------------------------------------------------------
# sweeps
def sweep_geometries(mesh, radius=1.0, shifts=10, center=(0.0, 0.0), direction=(1.0, 0.0)):
    """Static circles with centre moved by ``k h / shifts`` along ``direction``, k = 0..shifts-1."""
    spacing = mesh.h / math.sqrt(2.0)
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    out = []
    for k in range(shifts):
        c = np.asarray(center, float) + d * spacing * k / shifts
        dom = geo.static_circle(center=tuple(c), radius=radius)
        out.append(geo.build_geometry(dom, mesh, 0.0, 0.0))
    return out


def assembler_for(pair, geom, penalties: Penalties | None = None) -> Assembler:
    V, Q = build_spaces(pair, geom)
    return Assembler(geom, V, Q, pair, penalties)


def _spread(values):
    v = np.asarray([x for x in values if np.isfinite(x)], float)
    if len(v) == 0 or v.min() <= 0:
        return math.inf
    return float(v.max() / v.min())


def check_coercivity(pair, geometries, penalties: Penalties | None = None, pencil: bool = False) -> StabilityReport:
    rel = []
    alpha = []
    for g in geometries:
        res = coercivity_margin(assembler_for(pair, g, penalties), pencil=pencil)
        rel.append(res["relative"])
        alpha.append(res.get("alpha", math.nan))
    ok = bool(min(rel) >= -1e-10)
    return StabilityReport(f"coercivity[{pair.label}]", float(min(rel)), float(min(rel)), float(max(rel)), ok,
                           {"relative_min_eig": rel, "alpha": alpha})


def check_assumption(pair, geometries, samples=30, seed=0, theta=True) -> StabilityReport:
    vals = [check_assumption_pair(pair, assembler_for(pair, g), samples, seed, theta) for g in geometries]
    c1 = [v["c1"] for v in vals]
    c3 = [v["c3"] for v in vals]
    th = [v.get("theta", math.nan) for v in vals]
    spreads = [_spread(c1), _spread(c3)] + ([_spread(th)] if theta else [])
    ok = all(v["b_ok"] for v in vals) and max(spreads) <= 10.0
    return StabilityReport(f"assumption[{pair.label}]", float(max(c1)), float(min(spreads)), float(max(spreads)),
                           ok, {"c1": c1, "c3": c3, "theta": th, "b_slack": [v["b_slack"] for v in vals]})


def check_trace_inequality(pair, geometries) -> StabilityReport:
    vals = [trace_constant(assembler_for(pair, g)) for g in geometries]
    sp_ = _spread(vals)
    return StabilityReport(f"trace[{pair.label}]", float(max(vals)), float(min(vals)), float(max(vals)),
                           bool(sp_ <= 2.0), {"C_trace": vals, "spread": sp_})


def check_norm_equivalence(pair, geometries, bound: float = 50.0) -> StabilityReport:
    """Lower and upper equivalence constants must each vary by at most ``bound`` across the sweep."""
    per = [norm_equivalence(assembler_for(pair, g)) for g in geometries]
    spreads = []
    for key in ("l2_ext", "triple_ext", "pressure_ext"):
        spreads.append(_spread([p[key][0] for p in per]))
        spreads.append(_spread([p[key][1] for p in per]))
    return StabilityReport(f"norm_equivalence[{pair.label}]", float(max(spreads)), float(min(spreads)),
                           float(max(spreads)), bool(max(spreads) <= bound), {"per_geometry": per, "spreads": spreads})


# ---------------------------------------------------------------------------
# convergence
@dataclass
class ConvergenceTable:
    rows: list
    columns: tuple = ("h", "dt", "err_l2", "err_energy", "err_pressure",
                      "rate_l2", "rate_energy", "rate_pressure")

    def rates(self, key):
        return [r[f"rate_{key}"] for r in self.rows[1:]]

    def write_csv(self, path):
        from .stepper import write_csv
        return write_csv(path, self.rows, list(self.columns))


def error_functionals(rows, dt) -> dict:
    """Square roots of the three error functionals of a run (steps n >= 1)."""
    rows = [r for r in rows if r["n"] >= 1]
    l2 = max(r["err_u_l2"] for r in rows)
    energy = math.sqrt(dt * sum(r["err_u_triple"] ** 2 for r in rows))
    pressure = math.sqrt(dt * sum(r["err_p_ext"] ** 2 for r in rows))
    return {"err_l2": l2, "err_energy": energy, "err_pressure": pressure}


def fit_rates(rows):
    for prev, cur in zip(rows, rows[1:]):
        for key in ("l2", "energy", "pressure"):
            a, b = prev[f"err_{key}"], cur[f"err_{key}"]
            if a > 0 and b > 0 and prev["h"] != cur["h"]:
                cur[f"rate_{key}"] = math.log(a / b) / math.log(prev["h"] / cur["h"])
            else:
                cur[f"rate_{key}"] = math.nan
    for key in ("l2", "energy", "pressure"):
        rows[0].setdefault(f"rate_{key}", math.nan)
    return rows


def convergence_study(problem, box, spacings, dt_law, params_factory, out_dir=None) -> ConvergenceTable:
    """Run ``problem`` on grids with the given spacings and fit rates between levels.

    ``dt_law(h)`` gives the time step for spacing ``h``; ``params_factory(dt)``
    builds :class:`~oseen_cutfem.stepper.StepParams`.
    """
    from .mesh import build_uniform_mesh
    from .problems import spacing_to_n
    from .stepper import run

    spacings = [float(h) for h in spacings]
    if any(b >= a for a, b in zip(spacings, spacings[1:])):
        raise InvalidArgumentError("h list must be strictly decreasing")
    rows = []
    for h in spacings:
        mesh = build_uniform_mesh(box, spacing_to_n(box, h))
        params = params_factory(dt_law(h))
        sub = None if out_dir is None else Path(out_dir) / f"h_{h:.6g}"
        try:
            res = run(problem, mesh, params, out_dir=sub)
        except Exception as exc:
            log.error("convergence study aborted at h=%g: %s", h, exc)
            exc.partial = ConvergenceTable(fit_rates(rows) if rows else rows)
            raise
        row = {"h": h, "dt": params.dt}
        row.update(error_functionals(res.rows, params.dt))
        rows.append(row)
        log.info("h=%g errors %s", h, row)
    table = ConvergenceTable(fit_rates(rows))
    if out_dir is not None:
        table.write_csv(Path(out_dir) / "convergence.csv")
    return table


# ---------------------------------------------------------------------------
# output
def write_state_vtk(state, path):
    """Velocity at vertices, cell classes and cell-mean pressure on the background mesh."""
    mesh = state.geometry.mesh
    cells = state.geometry.active_cells
    vel = np.zeros((mesh.num_vertices, 2))
    coords = mesh.cell_coords[cells]
    vals = state.u.values(cells, coords)  # (nc, 3, 2)
    vel[mesh.cells[cells].ravel()] = vals.reshape(-1, 2)
    cell_data = {"cell_class": state.geometry.cell_class.astype(float)}
    if state.p is not None:
        pc = np.full(mesh.num_cells, np.nan)
        ctr = coords.mean(axis=1)[:, None, :]
        pc[cells] = state.p.values(cells, ctr)[:, 0, 0]
        cell_data["pressure"] = np.nan_to_num(pc)
    mesh.write_vtk(path, cell_data=cell_data, point_data={"velocity": vel})
