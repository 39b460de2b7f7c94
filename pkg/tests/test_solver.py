import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from viscontact.contact import eval_j
from viscontact.fem import (ContactData, LoadSpec, MaterialModel, assemble_load, assemble_stiffness, contact_trace,
                            vertical_arc_traction)
from viscontact.history import ConstantKernel, SampledKernel
from viscontact.solver import (NoConvergence, SolverConfig, StepProblem, cost_value, energy_residual,
                               minimize_step, power_iteration, run_simulation, verify_vi)

MAT = MaterialModel(1e4, 0.4)
CFG = SolverConfig()


def one_dof_contact(alpha=1.0):
    return ContactData(np.array([0]), np.array([1.0]), np.array([alpha]), np.array([0]), np.array([1.0]),
                       np.array([0]))


def solve_1d(a, alphaF, f, **kw):
    K = sp.csr_matrix([[a]])
    G = sp.csr_matrix([[0.0]])
    res = minimize_step(K, G, 0.0, 0.1, np.zeros(1), np.array([f]), np.zeros(1), SolverConfig(**kw),
                        one_dof_contact(alphaF))
    return res.u[0]


def brute_1d(a, alphaF, f, step=1e-6):
    x = np.arange(-3.0, 3.0 + step / 2, step)
    return x[np.argmin(0.5 * a * x * x + alphaF * np.maximum(x, 0) - f * x)]


@pytest.fixture(scope="module")
def coarse_problem(coarse_space):
    K = assemble_stiffness(coarse_space, MAT)
    return coarse_space, K, coarse_space.gram, contact_trace(coarse_space, 10.0)


def test_cost_zero(coarse_problem):
    s, K, G, c = coarse_problem
    f = assemble_load(s, vertical_arc_traction(), 1.0)
    assert cost_value(np.zeros(s.n_dofs), K, G, 1e4, 0.05, np.zeros(s.n_dofs), f, c) == 0


def test_cost_coercive_bound(coarse_problem):
    s, K, G, c = coarse_problem
    b, k = 1e4, 0.05
    M = (K + k * b * G).toarray()
    m_min = np.linalg.eigvalsh(M).min()
    rng = np.random.default_rng(0)
    H = rng.standard_normal(s.n_dofs)
    f = assemble_load(s, vertical_arc_traction(), 2.0)
    for _ in range(20):
        w = rng.standard_normal(s.n_dofs) * rng.uniform(1e-3, 1)
        val = cost_value(w, K, G, b, k, H, f, c)
        assert val >= 0.5 * m_min * w @ w - np.linalg.norm(H - f) * np.linalg.norm(w) - 1e-9


@pytest.mark.parametrize("f,expected", [(3.0, 1.0), (0.5, 0.0), (0.0, 0.0), (1.0, 0.0), (-1.0, -0.5)])
def test_one_dof_analytic(f, expected):
    assert solve_1d(2.0, 1.0, f) == pytest.approx(expected, abs=1e-9)
    assert brute_1d(2.0, 1.0, f) == pytest.approx(expected, abs=2e-6)


def test_one_dof_matches_grid_without_refinement():
    for f in np.linspace(-2, 4, 13):
        assert solve_1d(2.0, 1.0, f, refine_active_set=False) == pytest.approx(brute_1d(2.0, 1.0, f), abs=2e-6)


def test_zero_data_gives_zero(coarse_problem):
    s, K, G, c = coarse_problem
    z = np.zeros(s.n_dofs)
    res = minimize_step(K, G, 1e4, 0.05, z, z, z, CFG, c)
    assert np.all(res.u == 0)


def test_separation_matches_direct_solve(coarse_problem):
    s, K, G, c = coarse_problem
    b, k = 1e4, 0.05
    f = assemble_load(s, vertical_arc_traction(), 0.5)
    H = np.zeros(s.n_dofs)
    res = minimize_step(K, G, b, k, H, f, np.zeros(s.n_dofs), CFG, c)
    direct = spla.spsolve((K + k * b * G).tocsc(), f - H)
    assert np.all(c.normal(direct) < 0)
    assert np.linalg.norm(res.u - direct) <= 1e-7 * np.linalg.norm(direct)


def test_elastic_separation_solves_linear_system(coarse_problem):
    s, K, G, c = coarse_problem
    f = assemble_load(s, vertical_arc_traction(), 1.0)
    res = minimize_step(K, G, 0.0, 0.05, np.zeros(s.n_dofs), f, np.zeros(s.n_dofs), CFG, c)
    assert np.linalg.norm(K @ res.u - f) <= 1e-7 * np.linalg.norm(f)


def test_fixed_point_certificate(coarse_problem):
    s, K, G, c = coarse_problem
    f = assemble_load(s, vertical_arc_traction(), 4.0)
    res = minimize_step(K, G, 0.0, 0.05, np.zeros(s.n_dofs), f, np.zeros(s.n_dofs), CFG, c)
    p = StepProblem(K, -f, c)
    assert p.fixed_point_residual(res.u) <= CFG.opt_tol * (1 + np.linalg.norm(res.u))
    assert np.all(c.normal(res.u) > 0)  # pressed into the foundation


def test_apg_alone_converges_and_is_monotone(coarse_problem):
    s, K, G, c = coarse_problem
    f = assemble_load(s, vertical_arc_traction(), 4.0)
    cfg = SolverConfig(refine_active_set=False)
    res = minimize_step(K, G, 1e4, 0.05, np.zeros(s.n_dofs), f, np.zeros(s.n_dofs), cfg, c)
    assert not res.refined
    obj = np.array(res.objective)
    assert np.all(np.diff(obj) <= 0)
    M = K + 0.05 * 1e4 * G
    p = StepProblem(M, -f, c)
    assert p.certified(res.u, cfg.opt_tol)[0]
    ref = minimize_step(K, G, 1e4, 0.05, np.zeros(s.n_dofs), f, np.zeros(s.n_dofs), CFG, c)
    gap = p.value(res.u) - p.value(ref.u)
    assert -1e-12 * abs(p.value(ref.u)) <= gap <= 1e-8 * abs(p.value(ref.u))


def test_no_convergence_carries_iterate(coarse_problem):
    s, K, G, c = coarse_problem
    f = assemble_load(s, vertical_arc_traction(), 4.0)
    cfg = SolverConfig(max_inner_iters=3, refine_active_set=False, check_every=1)
    with pytest.raises(NoConvergence) as err:
        minimize_step(K, G, 0.0, 0.05, np.zeros(s.n_dofs), f, np.zeros(s.n_dofs), cfg, c)
    assert err.value.iterate is not None and err.value.residual > 0


def test_power_iteration(coarse_problem):
    _, K, _, _ = coarse_problem
    exact = np.linalg.eigvalsh(K.toarray()).max()
    assert power_iteration(K) == pytest.approx(exact, rel=1e-6)


def test_verify_vi(coarse_problem):
    s, K, G, c = coarse_problem
    b, k = 1e4, 0.05
    f = assemble_load(s, vertical_arc_traction(), 4.0)
    H = np.zeros(s.n_dofs)
    u = minimize_step(K, G, b, k, H, f, np.zeros(s.n_dofs), CFG, c).u
    assert verify_vi(u, K, G, b, k, H, f, 500, c) >= -1e-6
    bad = u.copy()
    bad[c.normal_dof[0]] += 0.1
    assert verify_vi(bad, K, G, b, k, H, f, 500, c) < 0
    # v = u contributes exactly zero
    M = K + k * b * G
    r = M @ u + H - f
    assert r @ (u - u) + eval_j(u, c) - eval_j(u, c) == 0


def test_invalid_config():
    for kw in (dict(T_end=0), dict(n_steps=0), dict(opt_tol=0)):
        with pytest.raises(ValueError):
            SolverConfig(**kw)


def small_run(space, mat, loads, N=20, **kw):
    return run_simulation(space, mat, loads, contact_trace(space, 10.0), SolverConfig(n_steps=N, **kw))


def test_zero_loads_give_zero_trajectory(coarse_space):
    tr = small_run(coarse_space, MaterialModel(1e4, 0.4, ConstantKernel(1e4)), LoadSpec())
    assert np.all(tr.u == 0) and np.all(tr.stress == 0)


def test_deterministic(coarse_space):
    mat = MaterialModel(1e4, 0.4, ConstantKernel(1e4))
    a = small_run(coarse_space, mat, vertical_arc_traction())
    b = small_run(coarse_space, mat, vertical_arc_traction())
    assert np.array_equal(a.u, b.u) and np.array_equal(a.stress, b.stress)


def test_general_kernel_path_matches_recursion(coarse_space):
    fast = small_run(coarse_space, MaterialModel(1e4, 0.4, ConstantKernel(1e4)), vertical_arc_traction(), N=30)
    slow = small_run(coarse_space, MaterialModel(1e4, 0.4, SampledKernel(lambda t: 1e4)), vertical_arc_traction(),
                     N=30)
    assert np.linalg.norm(fast.u - slow.u) <= 1e-9 * np.linalg.norm(fast.u)
    assert np.abs(fast.stress - slow.stress).max() <= 1e-8 * np.abs(fast.stress).max()


def test_early_elastic_steps_scale_with_load(coarse_space):
    tr = small_run(coarse_space, MAT, vertical_arc_traction(), N=50)
    # separated while the load points up: u_i = sin(t_i) u*, so ||u_i|| <= C |sin t_i| with one C
    sep = np.all(tr.u_nu < 0, axis=1)
    idx = np.flatnonzero(sep)[:10]
    C = np.linalg.norm(tr.u[idx], axis=1) / np.abs(np.sin(tr.times[idx]))
    assert len(idx) >= 5
    assert np.ptp(C) <= 1e-8 * C.max()


def test_run_certificates(coarse_space):
    tr = small_run(coarse_space, MaterialModel(1e4, 0.4, ConstantKernel(1e4)), vertical_arc_traction(), N=40)
    assert tr.energy_residual.max() <= 1e-7
    assert tr.vi_residual.min() >= -1e-6
    assert np.abs(tr.sigma_tau).max() <= 1e-8 * 10
    for i in range(tr.n_steps):
        assert energy_residual(tr.u[i], tr.M, tr.memory[i], tr.loads_f[i], tr.contact) == tr.energy_residual[i]


def test_no_convergence_reports_step(coarse_space):
    with pytest.raises(NoConvergence) as err:
        small_run(coarse_space, MAT, vertical_arc_traction(), N=10, max_inner_iters=2, refine_active_set=False,
                  check_every=1)
    assert err.value.step == 1
