import math

import numpy as np
import pytest

from viscontact.history import (ConstantKernel, HistoryState, NonConstantKernel, SampledKernel, convolve_full,
                                history_append, history_update, lag_operator, memory_load, volterra_apply,
                                volterra_resolve)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + d * np.eye(d)


def test_convolve_zero():
    G = np.eye(3)
    assert np.all(convolve_full([np.zeros(3)], ConstantKernel(2.0), 0.1, G) == 0)


def test_convolve_constant_sequence(coarse_space):
    G = coarse_space.gram
    u = np.random.default_rng(0).standard_normal(coarse_space.n_dofs)
    b, k, n = 1e4, 0.05, 6
    out = convolve_full([u] * n, ConstantKernel(b), k, G)
    assert rel(out, n * k * b * (G @ u)) < 1e-13


def test_convolve_sampled_kernel_brute_force(coarse_space):
    s = coarse_space
    rng = np.random.default_rng(1)
    b, k, n = 3.0, 0.1, 4
    us = [rng.standard_normal(s.n_dofs) for _ in range(n)]
    kern = SampledKernel(lambda t: b * math.exp(-t))
    out = convolve_full(us, kern, k, s)
    # brute force: element strains and areas, no assembled matrix
    expected = np.zeros(s.n_dofs)
    for j, uj in enumerate(us, start=1):
        sig = k * b * math.exp(-(n - j) * k) * s.strains_mandel(uj)
        expected += s.strain_op.T @ (s.areas[:, None] * sig).ravel()
    assert rel(out, expected) < 1e-12


def test_convolve_tensor_kernel(coarse_space):
    s = coarse_space
    rng = np.random.default_rng(2)
    B = random_spd(rng, 3)
    us = [rng.standard_normal(s.n_dofs) for _ in range(3)]
    kern = SampledKernel(lambda t: B * (1 + t))
    out = convolve_full(us, kern, 0.2, s)
    expected = sum(0.2 * s.assemble(B * (1 + (3 - j) * 0.2)) @ u for j, u in enumerate(us, start=1))
    assert rel(out, expected) < 1e-12


def test_history_update_base_case(coarse_space):
    G = coarse_space.gram
    u = np.random.default_rng(3).standard_normal(coarse_space.n_dofs)
    h = history_update(HistoryState.empty(ConstantKernel(5.0), 0.1, len(u)), u, G)
    assert h.step_index == 1
    assert rel(h.accumulated, 0.5 * (G @ u)) < 1e-14


def test_history_update_constant_sequence(coarse_space):
    G = coarse_space.gram
    u = np.random.default_rng(4).standard_normal(coarse_space.n_dofs)
    h = HistoryState.empty(ConstantKernel(2.0), 0.25, len(u))
    for i in range(1, 9):
        h = history_update(h, u, G)
        assert rel(h.accumulated, i * 0.25 * 2.0 * (G @ u)) < 1e-13


def test_empty_history_is_zero():
    h = HistoryState.empty(ConstantKernel(2.0), 0.1, 5)
    assert h.step_index == 0 and np.all(h.accumulated == 0)
    assert np.all(memory_load(h, np.eye(5)) == 0)


def test_recursion_rejects_general_kernel():
    h = HistoryState.empty(SampledKernel(lambda t: 1.0), 0.1, 3)
    with pytest.raises(NonConstantKernel):
        history_update(h, np.ones(3), np.eye(3))


def test_history_append_general_matches_convolution(coarse_space):
    s = coarse_space
    rng = np.random.default_rng(5)
    kern = SampledKernel(lambda t: 2.0 * math.exp(-3 * t))
    h = HistoryState.empty(kern, 0.1, s.n_dofs)
    us = []
    for _ in range(5):
        us.append(rng.standard_normal(s.n_dofs))
        nxt = memory_load(h, s)
        if us[:-1]:
            assert rel(nxt, convolve_full(us[:-1], kern, 0.1, s, at_step=len(us))) < 1e-13
        h = history_append(h, us[-1], s)
        assert rel(h.accumulated, convolve_full(us, kern, 0.1, s)) < 1e-13


def test_causality(coarse_space):
    s = coarse_space
    rng = np.random.default_rng(6)
    us = [rng.standard_normal(s.n_dofs) for _ in range(6)]
    kern = SampledKernel(lambda t: 1.0 + t)
    a = convolve_full(us[:4], kern, 0.1, s)
    changed = us[:4] + [rng.standard_normal(s.n_dofs) for _ in range(2)]
    b = convolve_full(changed[:4], kern, 0.1, s)
    assert np.array_equal(a, b)
    ha = hb = HistoryState.empty(ConstantKernel(1.0), 0.1, s.n_dofs)
    for j in range(6):
        ha = history_update(ha, us[j], s.gram)
        hb = history_update(hb, changed[j] if j >= 4 else us[j], s.gram)
        if j == 3:
            snap_a, snap_b = ha.accumulated.copy(), hb.accumulated.copy()
    assert np.array_equal(snap_a, snap_b)


def test_history_lipschitz_bound(coarse_space):
    s = coarse_space
    G = s.gram
    b, k = 4.0, 0.1
    normG = np.linalg.norm(G.toarray(), 2)
    rng = np.random.default_rng(7)
    for _ in range(5):
        us = [rng.standard_normal(s.n_dofs) for _ in range(8)]
        ws = [rng.standard_normal(s.n_dofs) for _ in range(8)]
        lhs = np.linalg.norm(convolve_full(us, ConstantKernel(b), k, G) - convolve_full(ws, ConstantKernel(b), k, G))
        rhs = b * normG * k * sum(np.linalg.norm(u - w) for u, w in zip(us, ws))
        assert lhs <= rhs * (1 + 1e-12)


def test_lag_operator_scalar(coarse_space):
    assert abs(lag_operator(ConstantKernel(3.0), 0.0, coarse_space) - 3.0 * coarse_space.gram).max() == 0


def test_volterra_no_memory():
    u = volterra_resolve(2.0, None, np.ones(5), 0.1)
    assert np.allclose(u, 0.5)


def test_volterra_hand_example():
    u = volterra_resolve(1.0, ConstantKernel(1.0), [1.0, 1.0], 1.0)
    assert u == pytest.approx([0.5, 0.25], abs=1e-15)


def test_volterra_callable_and_number_kernels():
    g = np.array([1.0, 2.0, 0.5])
    a = volterra_resolve(1.5, 0.7, g, 0.2)
    b = volterra_resolve(1.5, lambda t: 0.7, g, 0.2)
    c = volterra_resolve(1.5, ConstantKernel(0.7), g, 0.2)
    assert np.allclose(a, b, rtol=1e-14) and np.allclose(a, c, rtol=1e-14)


def test_volterra_recovers_on_random_spd():
    rng = np.random.default_rng(8)
    A = random_spd(rng, 5)
    g = rng.standard_normal((7, 5))
    u = volterra_resolve(A, ConstantKernel(0.9), g, 0.1)
    assert rel(volterra_apply(A, ConstantKernel(0.9), u, 0.1), g) < 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_composition_identity_both_orders(seed):
    rng = np.random.default_rng(100 + seed)
    d = int(rng.integers(2, 21))
    N = int(rng.integers(1, 51))
    A = random_spd(rng, d)
    Bt = random_spd(rng, d) / d
    for kern in (ConstantKernel(float(rng.uniform(0, 3))), SampledKernel(lambda t: Bt * math.exp(-t))):
        g = rng.standard_normal((N, d))
        u = volterra_resolve(A, kern, g, 0.05)
        assert rel(volterra_apply(A, kern, u, 0.05), g) < 1e-10
        assert rel(volterra_resolve(A, kern, volterra_apply(A, kern, g, 0.05), 0.05), g) < 1e-10


def test_volterra_batched_matches_columns():
    rng = np.random.default_rng(9)
    A = random_spd(rng, 3)
    g = rng.standard_normal((6, 3, 4))
    u = volterra_resolve(A, ConstantKernel(2.0), g, 0.1)
    for r in range(4):
        assert np.array_equal(u[:, :, r], volterra_resolve(A, ConstantKernel(2.0), g[:, :, r], 0.1))


def test_volterra_rejects_mismatched_kernel():
    with pytest.raises(ValueError):
        volterra_resolve(np.eye(2), lambda t: np.eye(3), np.ones((2, 2)), 0.1)
