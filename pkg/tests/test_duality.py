import numpy as np
import pytest

from viscontact import duality as du
from viscontact.config import RunConfig
from viscontact.experiments import simulate
from viscontact.fem import LoadSpec, MaterialModel, contact_trace, from_mandel, to_mandel, vertical_arc_traction
from viscontact.history import ConstantKernel, SampledKernel
from viscontact.solver import SolverConfig, run_simulation


@pytest.fixture(scope="module")
def coarse_cfg():
    return RunConfig(h_interior=1.2, h_contact=0.5, n_steps=40)


def coarse_run(space, kernel, N=40, loads=None):
    return run_simulation(space, MaterialModel(1e4, 0.4, kernel), loads or vertical_arc_traction(),
                          contact_trace(space, 10.0), SolverConfig(n_steps=N))


def test_zero_stress_admissible_for_zero_load(coarse_space):
    c = contact_trace(coarse_space, 10.0)
    z = np.zeros((coarse_space.n_triangles, 2, 2))
    assert du.check_sigma_admissible(z, np.zeros(coarse_space.n_dofs), coarse_space, c, 200) == 0.0
    tr = coarse_run(coarse_space, ConstantKernel(1e4), N=5, loads=LoadSpec())
    rep = du.certify_trajectory(tr, 100)
    assert np.all(rep.sigma_violation == 0) and np.all(rep.roundtrip_error == 0)


def test_converged_steps_are_admissible(visco_report):
    assert visco_report.sigma_violation.min() >= -1e-6
    assert visco_report.n_probes >= 500


def test_elastic_part_alone_is_not_admissible(visco_run, ref_space):
    i = visco_run.step_of_time(2.75)
    u = visco_run.u[i]
    elastic_only = from_mandel(ref_space.strains_mandel(u) @ visco_run.material.elastic_matrix().T)
    v = du.check_sigma_admissible(elastic_only, visco_run.loads_f[i], ref_space, visco_run.contact, 500, u_i=u)
    assert v < -1e-3


def test_inclusion_trivial_sample(visco_run):
    i = 30
    s = to_mandel(visco_run.stress[i])
    assert du.check_inclusion(visco_run.strains_mandel(i), s, [s], visco_run.space) == 0.0


def test_inclusion_in_separation_phase(visco_run, ref_space):
    i = visco_run.step_of_time(1.5)
    sep = [j for j in range(visco_run.n_steps) if j != i and np.all(visco_run.u_nu[j] < 0)]
    stress_m = to_mandel(visco_run.stress)
    lifts = np.array([du.load_lift(f, ref_space) for f in visco_run.loads_f])
    probes = du.ProbeSet.build(ref_space, visco_run.contact, 500, u_i=visco_run.u[i])
    cands = du.shifted_candidates(stress_m, lifts, i, sep, include_raw=False)
    taus = du.admissible_samples(cands, visco_run.loads_f[i], ref_space, probes)
    assert len(taus) == len(cands)
    assert du.check_inclusion(visco_run.strains_mandel(i), stress_m[i], taus, ref_space) >= -1e-6
    assert np.abs(visco_run.sigma_nu[i]).max() <= 0.05


def test_inclusion_over_run(visco_report):
    assert visco_report.inclusion_violation.min() >= -1e-6
    assert visco_report.n_samples.min() >= 1


def test_sampler_filters_inadmissible(visco_run, ref_space):
    i = visco_run.step_of_time(4.0)
    good = to_mandel(visco_run.stress[i])
    bad = good.copy()
    # strong compression everywhere: large negative normal trace on gamma3
    bad[:, 1] -= 1e3
    probes = du.ProbeSet.build(ref_space, visco_run.contact, 500, u_i=visco_run.u[i])
    assert du.check_sigma_admissible(bad, visco_run.loads_f[i], ref_space, visco_run.contact, probes=probes) < 0
    kept = du.admissible_samples([bad, good], visco_run.loads_f[i], ref_space, probes)
    assert len(kept) == 1 and np.array_equal(kept[0], good)


def test_no_samples_raises(visco_run):
    with pytest.raises(du.NoAdmissibleSamples):
        du.check_inclusion(visco_run.strains_mandel(0), to_mandel(visco_run.stress[0]), [], visco_run.space)


def test_strain_to_displacement_zero(coarse_space):
    assert np.all(du.strain_to_displacement(np.zeros((coarse_space.n_triangles, 3)), coarse_space) == 0)


def test_strain_to_displacement_roundtrip(ref_space):
    u = np.random.default_rng(0).standard_normal(ref_space.n_dofs)
    back = du.strain_to_displacement(ref_space.strains(u), ref_space)
    assert np.linalg.norm(back - u) <= 1e-9 * np.linalg.norm(u)


def test_strain_to_displacement_projection(coarse_space):
    rng = np.random.default_rng(1)
    om = rng.standard_normal((coarse_space.n_triangles, 3))
    u1 = du.strain_to_displacement(om, coarse_space)
    u2 = du.strain_to_displacement(coarse_space.strains_mandel(u1), coarse_space)
    assert np.linalg.norm(u2 - u1) <= 1e-10 * np.linalg.norm(u1)
    # residual is orthogonal to every compatible strain field
    r = om - coarse_space.strains_mandel(u1)
    v = rng.standard_normal(coarse_space.n_dofs)
    assert abs(coarse_space.q_product(r, coarse_space.strains_mandel(v))) <= 1e-10 * np.linalg.norm(om)


def test_roundtrip_reference_run(visco_report):
    assert visco_report.roundtrip_error.max() <= 1e-8


def test_roundtrip_general_kernels(coarse_space):
    rng = np.random.default_rng(2)
    B = rng.standard_normal((3, 3))
    B = 2e3 * (B @ B.T + 3 * np.eye(3))
    for kern in (SampledKernel(lambda t: 1e4 * np.exp(-t)), SampledKernel(lambda t: B * (1 + t)), None):
        tr = coarse_run(coarse_space, kern, N=15)
        assert du.duality_roundtrip(tr).max() <= 1e-8


def test_stress_inversion_matches_strains(visco_run):
    omega = du.strains_from_stresses(to_mandel(visco_run.stress), visco_run.material, visco_run.dt)
    for i in (0, 50, 99):
        ref = visco_run.strains_mandel(i)
        assert np.abs(omega[i] - ref).max() <= 1e-9 * np.abs(ref).max()


def test_report_finite_and_certified(visco_report):
    assert visco_report.certified()
    assert len(list(visco_report.rows())) == len(visco_report.times)


def test_lipschitz_zero_perturbation(coarse_cfg):
    rows = du.lipschitz_experiment(lambda F, a: simulate(coarse_cfg, F=F, amplitude=a), (10.0, 10.0), [(0.0, 0.0)])
    assert rows[0]["numerator"] == 0.0 and rows[0]["denominator"] == 0.0


def test_lipschitz_yield_perturbation(coarse_cfg):
    run = lambda F, a: simulate(coarse_cfg, F=F, amplitude=a)  # noqa: E731
    base = run(10.0, 10.0)
    big, small = du.lipschitz_experiment(run, (10.0, 10.0), [(1.0, 0.0), (0.1, 0.0)], base_run=base)
    assert np.isfinite(big["ratio"]) and big["ratio"] > 0
    assert big["denominator"] == pytest.approx(1.0, rel=1e-12)  # ||1||_{L2(gamma3)} = |gamma3|^(1/2) = 1
    assert 0.2 <= small["ratio"] / big["ratio"] <= 5


def test_scaling_equivariance_elastic(coarse_cfg):
    err = du.scaling_equivariance(lambda F, a: simulate(coarse_cfg, b=0.0, F=F, amplitude=a), (10.0, 10.0), 2.0)
    assert err <= 1e-8


def test_dual_norm_matches_riesz(coarse_space):
    f = np.random.default_rng(3).standard_normal(coarse_space.n_dofs)
    g = du.load_lift(f, coarse_space)
    assert du.dual_norm(f, coarse_space) == pytest.approx(np.sqrt(coarse_space.q_product(g, g)), rel=1e-10)
    v = np.random.default_rng(4).standard_normal(coarse_space.n_dofs)
    assert coarse_space.q_product(g, coarse_space.strains_mandel(v)) == pytest.approx(f @ v, rel=1e-9)
