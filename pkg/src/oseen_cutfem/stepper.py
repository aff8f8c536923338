"""Time stepping of the unfitted Oseen scheme (BDF1, BDF2).

Each step rebuilds the active geometry, assembles the saddle point system
on the current active mesh and evaluates the previous iterates on the
current domain through their extended support. No projection between
steps is needed because all spaces live on the same background mesh.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .errors import DeltaTooSmallError, InvalidArgumentError, SolverError, StepFailure
from .fespace import FEFunction, build_spaces, interpolate, transfer
from .forms import Assembler, Penalties
from .linalg import BorderedFactor

log = logging.getLogger(__name__)

BDF = {"bdf1": (1.0, (1.0,)), "bdf2": (1.5, (2.0, -0.5))}


@dataclass
class StepParams:
    dt: float
    T: float
    integrator: str = "bdf1"
    c_delta: float = 2.0
    penalties: Penalties = field(default_factory=Penalties)
    tol: float = 1e-10
    coupling_C: float = 1.0
    check_coupling: bool = True

    def __post_init__(self):
        if self.integrator not in BDF:
            raise InvalidArgumentError(f"unknown integrator {self.integrator!r}")
        if not self.dt > 0 or not self.T > 0:
            raise InvalidArgumentError("dt and T must be positive")

    @property
    def delta_scale(self) -> float:
        return 2.0 if self.integrator == "bdf2" else 1.0


@dataclass
class TimeStepState:
    n: int
    t: float
    u: FEFunction
    p: FEFunction | None
    geometry: object
    assembler: Assembler
    diagnostics: dict = field(default_factory=dict)

    @property
    def V(self):
        return self.u.dofmap

    @property
    def Q(self):
        return self.assembler.Q


@dataclass
class SaddleSystem:
    """``[[c0/dt M + A, -B^T, 0], [-B, -gJ J, -m], [0, -m^T, 0]]`` and its load."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    nu: int
    nq: int

    def split(self, x):
        return x[:self.nu], x[self.nu:self.nu + self.nq], x[self.nu + self.nq:]


def saddle_matrix(asm: Assembler, c0: float, dt: float, A=None) -> sp.csr_matrix:
    A = asm.assemble_a() if A is None else A
    B = asm.assemble_b()
    J = asm.assemble_ghost_J()
    m = asm.mean_row()[:, None]
    top = (c0 / dt) * asm.assemble_mass() + A
    gJ = asm.penalties.gamma_J
    K = sp.bmat([[top, -B.T, None],
                 [-B, -gJ * J, -sp.csr_matrix(m)],
                 [None, -sp.csr_matrix(m.T), None]], format="csc")
    return K


def solve_saddle(system: SaddleSystem, tol: float = 1e-10, lu=None, max_refine: int = 4):
    """Direct solve with iterative refinement.

    The sparse core is factored once; the dense mean constraint is handled
    by :class:`~oseen_cutfem.linalg.BorderedFactor`.

    Returns ``(x, relative_residual, lu)``. Raises :class:`SolverError` if
    the residual stays above ``tol``.
    """
    K = system.matrix
    b = system.rhs
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0, lu
    history = []
    if lu is None:
        lu = BorderedFactor(K, pin=system.nu)
    # residuals in extended precision: in double, r = b - Kx has a rounding
    # floor eps |||K| |x||| / ||b|| that can exceed tol for the P3 ghost penalty
    Kc = sp.csr_matrix(K)
    KL = sp.csr_matrix((Kc.data.astype(np.longdouble), Kc.indices, Kc.indptr), shape=Kc.shape)
    bL = b.astype(np.longdouble)
    x = lu.solve(b)
    for _ in range(max_refine + 1):
        r = bL - KL @ x.astype(np.longdouble)
        res = float(np.linalg.norm(r) / bnorm)
        history.append(res)
        if not np.isfinite(res):
            break
        if res <= tol:
            return x, res, lu
        x = x + lu.solve(r.astype(float))
    raise SolverError(f"relative residual {history[-1]:.3e} above tolerance {tol:.1e}", history)


class Stepper:
    """Drives one problem on one background mesh with fixed parameters."""

    def __init__(self, problem, mesh, params: StepParams):
        self.problem = problem
        self.mesh = mesh
        self.params = params
        self.domain = problem.domain
        self._static = None  # (geometry, assembler) reused when the domain does not move
        self._lu_cache = {}

    # geometry ---------------------------------------------------------------
    def setup(self, n: int):
        t = n * self.params.dt
        if not self.domain.moving and self._static is not None:
            return self._static
        geom = geo.build_geometry(self.domain, self.mesh, min(t, self.domain.T), self.params.dt,
                                  self.params.c_delta, step=n, delta_scale=self.params.delta_scale)
        V, Q = build_spaces(self.problem.pair, geom)
        asm = Assembler(geom, V, Q, self.problem.pair, self.params.penalties)
        if not self.domain.moving:
            self._static = (geom, asm)
        return geom, asm

    def initialize(self) -> TimeStepState:
        geom, asm = self.setup(0)
        u0 = self.problem.u0
        seed = self.problem.options.get("random_initial_seed")
        if seed is not None:
            rng = np.random.default_rng(seed)
            u = FEFunction(asm.V, rng.standard_normal(asm.V.size), step=0)
        elif u0 is None:
            u = FEFunction(asm.V, step=0)
        else:
            u = interpolate(u0, asm.V)
            u.step = 0
        return TimeStepState(0, 0.0, u, None, geom, asm, {"residual": 0.0})

    # one step ---------------------------------------------------------------
    def step(self, history: list) -> TimeStepState:
        """Advance from ``history`` (most recent last) to the next step."""
        prev = history[-1]
        n = prev.n + 1
        t = n * self.params.dt
        scheme = self.params.integrator
        if scheme == "bdf2" and len(history) < 2:
            scheme = "bdf1"  # bootstrap
        c0, weights = BDF[scheme]
        used = history[::-1][:len(weights)]

        geom, asm = self.setup(n)
        if self.params.check_coupling:
            for old in used:
                if old.geometry is not geom and not geo.check_time_coupling(old.geometry, geom):
                    raise DeltaTooSmallError(
                        f"step {n}: the discrete domain left the extension layer of step {old.n}; "
                        "increase c_delta or decrease dt")
        dt = self.params.dt
        w = self.domain.velocity
        static = not self.domain.moving and self.domain.steady_w
        A = asm.assemble_a(w, t) if not static else self._cached_a(asm, w, t)
        M = asm.assemble_mass()

        hist = np.zeros(asm.V.size)
        for wgt, old in zip(weights, used):
            uo = old.u if old.u.dofmap is asm.V else transfer(old.u, asm.V)
            hist += wgt * uo.coefficients
        fu, gq = asm.assemble_rhs(self.problem.f, self.problem.g, t)
        rhs = np.concatenate([fu + (M @ hist) / dt, -gq, [0.0]])

        key = (id(asm), scheme)
        if static and key in self._lu_cache:
            lu, K = self._lu_cache[key]
        else:
            lu, K = None, saddle_matrix(asm, c0, dt, A)
        system = SaddleSystem(K, rhs, asm.V.size, asm.Q.ndofs)
        try:
            x, res, lu = solve_saddle(system, self.params.tol, lu)
        except SolverError as exc:
            raise StepFailure(f"step {n}: {exc}", step=n, report={"residuals": exc.residuals}) from exc
        if static and lu is not None:
            self._lu_cache[key] = (lu, K)
        xu, xp, xl = system.split(x)
        u = FEFunction(asm.V, xu, step=n)
        p = FEFunction(asm.Q, xp, step=n)
        return TimeStepState(n, t, u, p, geom, asm, {"residual": res, "multiplier": float(xl[0]),
                                                     "scheme": scheme})

    def _cached_a(self, asm, w, t):
        key = ("A", id(asm))
        if key not in self._lu_cache:
            self._lu_cache[key] = asm.assemble_a(w, t)
        return self._lu_cache[key]


def initialize(problem, mesh, params: StepParams) -> TimeStepState:
    return Stepper(problem, mesh, params).initialize()


def step_bdf1(previous: TimeStepState, problem, mesh, params: StepParams) -> TimeStepState:
    if params.integrator != "bdf1":
        params = StepParams(**{**params.__dict__, "integrator": "bdf1"})
    return Stepper(problem, mesh, params).step([previous])


def step_bdf2(older: TimeStepState, previous: TimeStepState, problem, mesh, params: StepParams) -> TimeStepState:
    if params.integrator != "bdf2":
        params = StepParams(**{**params.__dict__, "integrator": "bdf2"})
    return Stepper(problem, mesh, params).step([older, previous])


def number_of_steps(T: float, dt: float):
    """``(N, dt)`` with ``N = T / dt`` rounded; ``dt`` is adjusted if needed."""
    ratio = T / dt
    N = max(int(round(ratio)), 1)
    if abs(ratio - N) > 1e-9 * max(ratio, 1.0):
        warnings.warn(f"T/dt = {ratio:.6g} is not an integer; using N = {N}, dt = {T / N:.6g}")
        return N, T / N
    return N, dt


def check_time_step(dt: float, h: float, C: float = 1.0):
    """Refuse ``dt > C h`` and warn when ``dt < h^2 / 10``."""
    if dt > C * h * (1 + 1e-12):
        raise InvalidArgumentError(f"dt = {dt:.4g} violates dt <= {C:g} * h = {C * h:.4g}")
    if dt < h * h / 10:
        warnings.warn(f"dt = {dt:.3g} is below h^2/10 = {h * h / 10:.3g}; pressure stability may degrade")


@dataclass
class RunResult:
    rows: list
    columns: list
    states: list
    final: TimeStepState
    completed: bool = True
    error: Exception | None = None


def run(problem, mesh, params: StepParams, out_dir=None, stride: int = 0, keep_states: bool = False,
        monitor=None, csv_name: str = "run.csv", raise_on_failure: bool = True) -> RunResult:
    """Execute ``N = T/dt`` steps; record one diagnostics row per step (including n = 0).

    ``stride > 0`` dumps ``run_<step>.vtk`` every ``stride`` steps into ``out_dir``.
    ``monitor(state, previous)`` may add extra entries to the row.
    """
    from . import analysis

    N, dt = number_of_steps(params.T, params.dt)
    if dt != params.dt:
        params = StepParams(**{**params.__dict__, "dt": dt})
    check_time_step(dt, mesh.h, params.coupling_C)
    stepper = Stepper(problem, mesh, params)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    state = stepper.initialize()
    history = [state]
    states = [state] if keep_states else []
    rows = []

    def record(cur, prev):
        row = {"n": cur.n, "t": cur.t, "residual": cur.diagnostics.get("residual", 0.0)}
        row.update(analysis.state_norm_row(cur, problem.exact))
        if monitor is not None:
            row.update(monitor(cur, prev) or {})
        cur.diagnostics.update(row)
        rows.append(row)
        if out is not None and stride > 0 and cur.n % stride == 0:
            analysis.write_state_vtk(cur, out / f"run_{cur.n}.vtk")

    record(state, None)
    error = None
    for _ in range(N):
        try:
            new = stepper.step(history)
        except (StepFailure, DeltaTooSmallError) as exc:
            error = exc
            log.error("run aborted: %s", exc)
            break
        record(new, history[-1])
        history = (history + [new])[-2:]
        if keep_states:
            states.append(new)
        log.info("step %d t=%.4g residual=%.2e", new.n, new.t, new.diagnostics["residual"])

    columns = list(rows[0].keys())
    for r in rows[1:]:
        for k in r:
            if k not in columns:
                columns.append(k)
    if out is not None:
        write_csv(out / csv_name, rows, columns)
    result = RunResult(rows, columns, states, history[-1], error is None, error)
    if error is not None and raise_on_failure:
        error.partial = result
        raise error
    return result


def format_float(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if v is None:
        return "nan"
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def write_csv(path, rows, columns):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([format_float(r.get(c, math.nan)) for c in columns])
    return path


def configure_threads(k: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(int(k))
