import math

import numpy as np
import pytest
import scipy.sparse as sp

from oseen_cutfem import ElementPair, build_uniform_mesh
from oseen_cutfem import analysis as an
from oseen_cutfem import geometry as geo
from oseen_cutfem import stepper as st
from oseen_cutfem.errors import DeltaTooSmallError, InvalidArgumentError, SolverError
from oseen_cutfem.problems import BOX, manufactured_problem, random_initial_problem, zero_problem


def coarse():
    return build_uniform_mesh(BOX, 16)


def test_params_validation():
    with pytest.raises(InvalidArgumentError):
        st.StepParams(dt=0.1, T=1.0, integrator="rk4")
    with pytest.raises(InvalidArgumentError):
        st.StepParams(dt=-0.1, T=1.0)
    assert st.StepParams(dt=0.1, T=1, integrator="bdf2").delta_scale == 2.0


def test_number_of_steps():
    assert st.number_of_steps(0.5, 0.125) == (4, 0.125)
    with pytest.warns(UserWarning):
        N, dt = st.number_of_steps(0.4, 0.0625)
    assert N == 6 and dt == pytest.approx(0.4 / 6)


def test_time_step_bounds():
    with pytest.raises(InvalidArgumentError):
        st.check_time_step(1.0, 0.1)
    with pytest.warns(UserWarning):
        st.check_time_step(1e-5, 0.1)


@pytest.mark.parametrize("integrator", ["bdf1", "bdf2"])
def test_zero_data_moving(integrator):
    dom = geo.translating_circle(center=(-0.2, 0.0), velocity=(1.0, 0.0), T=0.5)
    res = st.run(zero_problem(dom, ElementPair.mini()), coarse(), st.StepParams(dt=0.125, T=0.5,
                                                                                 integrator=integrator))
    for r in res.rows:
        assert r["u_l2"] == 0.0 and r["u_triple"] == 0.0
        assert r["n"] == 0 or r["p_seminorm_ext"] == 0.0


def test_initialize_interpolates():
    m = coarse()
    dom = geo.static_circle(T=1.0)
    prob = manufactured_problem(dom, ElementPair.taylor_hood(2))
    prob.u0 = lambda x, y: np.stack([x + 2 * y, -y], axis=-1)
    s = st.initialize(prob, m, st.StepParams(dt=0.25, T=1.0))
    cells = s.geometry.active_cells
    pts = m.cell_coords[cells].mean(axis=1)[:, None, :]
    v = s.u.values(cells, pts)[:, 0]
    assert np.allclose(v, np.stack([pts[:, 0, 0] + 2 * pts[:, 0, 1], -pts[:, 0, 1]], axis=-1), atol=1e-13)
    assert st.initialize(zero_problem(dom, ElementPair.mini()), m, st.StepParams(dt=0.25, T=1.0)).u.coefficients.any() == False


def test_single_step_equals_run():
    m = coarse()
    prob = manufactured_problem(geo.static_circle(T=0.25), ElementPair.mini(), time_profile="cos")
    params = st.StepParams(dt=0.25, T=0.25)
    res = st.run(prob, m, params, keep_states=True)
    s0 = st.initialize(prob, m, params)
    s1 = st.step_bdf1(s0, prob, m, params)
    assert np.array_equal(res.states[-1].u.coefficients, s1.u.coefficients)
    assert len(res.rows) == 2


def test_fixed_point_convergence():
    m = coarse()
    prob = manufactured_problem(geo.static_circle(T=3.0), ElementPair.taylor_hood(2))
    res = st.run(prob, m, st.StepParams(dt=0.25, T=3.0), keep_states=True)
    M = res.states[-1].assembler.assemble_mass()
    incr = []
    for a, b in zip(res.states[1:], res.states[2:]):
        d = b.u.coefficients - a.u.coefficients
        incr.append(math.sqrt(d @ M @ d) / 0.25)
    incr = np.array(incr)
    assert np.all(np.diff(incr) < 0)
    ratio = incr[1:] / incr[:-1]
    assert ratio.max() < 0.9


class LinearInTime:
    """u = t (y^2, x^2), p = t x: inside Taylor-Hood(2) and linear in time."""

    def velocity(self, x, y, t):
        return t * np.stack([y * y, x * x], axis=-1)

    def velocity_gradient(self, x, y, t):
        out = np.zeros(np.shape(x) + (2, 2))
        out[..., 0, 1] = 2 * t * y
        out[..., 1, 0] = 2 * t * x
        return out

    def pressure(self, x, y, t):
        return t * x

    def pressure_gradient(self, x, y, t):
        return np.stack([np.full_like(x, t), np.zeros_like(x)], axis=-1)

    def forcing(self, x, y, t):
        # u_t - lap u + grad p
        return np.stack([y * y - 2 * t + t, x * x - 2 * t], axis=-1)


@pytest.mark.parametrize("integrator", ["bdf1", "bdf2"])
def test_linear_in_time_exact(integrator):
    """The difference quotients are exact for u linear in t, so the discrete solution is exact."""
    from oseen_cutfem.problems import Problem

    ex = LinearInTime()
    prob = Problem(geo.static_circle(T=1.0), ElementPair.taylor_hood(2), f=ex.forcing, g=ex.velocity,
                   u0=lambda x, y: ex.velocity(x, y, 0.0), exact=ex)
    res = st.run(prob, coarse(), st.StepParams(dt=0.25, T=1.0, integrator=integrator))
    for r in res.rows[1:]:
        assert r["err_u_triple_ext"] < 1e-9
        assert r["err_p_ext"] < 1e-9


def test_bdf2_random_initial_decay():
    m = coarse()
    prob = random_initial_problem(geo.static_circle(T=2.0), ElementPair.mini(), seed=3)
    res = st.run(prob, m, st.StepParams(dt=0.25, T=2.0, integrator="bdf2"))
    norms = [r["u_l2"] for r in res.rows]
    for a, b in zip(norms[2:], norms[3:]):
        assert b <= a + 1e-8


def test_stride_halves_dumps(tmp_path):
    m = coarse()
    prob = manufactured_problem(geo.static_circle(T=1.0), ElementPair.mini())
    params = st.StepParams(dt=0.125, T=1.0)
    st.run(prob, m, params, out_dir=tmp_path / "a", stride=2)
    st.run(prob, m, params, out_dir=tmp_path / "b", stride=4)
    na = len(list((tmp_path / "a").glob("run_*.vtk")))
    nb = len(list((tmp_path / "b").glob("run_*.vtk")))
    assert (na, nb) == (5, 3)  # steps 0,2,4,6,8 and 0,4,8
    assert (tmp_path / "a" / "run.csv").read_text().count("\n") == 10


def small_system(pair=ElementPair.mini(), n=8, radius=1.0):
    m = build_uniform_mesh(BOX, n)
    g = geo.build_geometry(geo.static_circle(radius=radius), m, 0.0, 0.0)
    asm = an.assembler_for(pair, g)
    K = st.saddle_matrix(asm, 1.0, 0.25)
    return asm, K


def test_solve_residual_and_scaling(rng):
    asm, K = small_system()
    b = rng.normal(size=K.shape[0])
    nu, nq = asm.V.size, asm.Q.ndofs
    b[-1] = 0.0
    x, res, _ = st.solve_saddle(st.SaddleSystem(K, b, nu, nq))
    assert res <= 1e-10
    d = np.exp(rng.uniform(-2, 2, size=K.shape[0]))
    D = sp.diags(d)
    y, _, _ = st.solve_saddle(st.SaddleSystem((D @ K @ D).tocsc(), d * b, nu, nq))
    assert np.allclose(d * y, x, rtol=1e-8, atol=1e-8 * np.abs(x).max())


def test_zero_rhs_short_circuit():
    asm, K = small_system()
    x, res, lu = st.solve_saddle(st.SaddleSystem(K, np.zeros(K.shape[0]), asm.V.size, asm.Q.ndofs))
    assert res == 0.0 and not x.any() and lu is None


def test_refinement_failure_reported(rng):
    asm, K = small_system()
    b = rng.normal(size=K.shape[0])
    with pytest.raises(SolverError) as info:
        st.solve_saddle(st.SaddleSystem(K, b, asm.V.size, asm.Q.ndofs), tol=1e-40, max_refine=1)
    assert len(info.value.residuals) == 2


def test_pressure_ghost_penalty_controls_conditioning():
    """On a sliver cut the system without J is far worse conditioned."""
    eps = 1e-7
    asm, K = small_system(n=8, radius=1.0 + eps)
    nu, nq = asm.V.size, asm.Q.ndofs
    J = sp.bmat([[sp.csr_matrix((nu, nu)), None, None],
                 [None, -asm.penalties.gamma_J * asm.assemble_ghost_J(), None],
                 [None, None, sp.csr_matrix((1, 1))]])
    K_noJ = (K - J).toarray()
    c1 = np.linalg.cond(K.toarray())
    c2 = np.linalg.cond(K_noJ)
    assert c2 > 1e3 * c1


def test_delta_too_small_detected():
    m = coarse()
    dom = geo.translating_circle(center=(-0.2, 0.0), velocity=(1.0, 0.0), T=0.5)
    params = st.StepParams(dt=0.25, T=0.5, c_delta=1.0)
    params.c_delta = 1.0
    prob = zero_problem(dom, ElementPair.mini())
    prob.u0 = lambda x, y: np.stack([x, y], axis=-1)
    # shrink the layer artificially
    stepper = st.Stepper(prob, m, params)
    s0 = stepper.initialize()
    object.__setattr__(s0, "geometry", geo.build_geometry(dom, m, 0.0, 0.0))
    with pytest.raises(DeltaTooSmallError):
        stepper.step([s0])


def test_csv_format(tmp_path):
    rows = [{"n": 0, "x": 0.1}, {"n": 1, "x": 1 / 3}]
    p = st.write_csv(tmp_path / "r.csv", rows, ["n", "x"])
    assert p.read_text() == "n,x\n0,0.10000000000000001\n1,0.33333333333333331\n"
