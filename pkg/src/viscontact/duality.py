"""Certificates for the stress and strain formulations of a computed run.

Given a displacement trajectory ``u_i`` these routines check, with sampled
test directions, that

* the stresses ``sigma_i`` lie in the admissible set
  ``Sigma(t) = {tau : (tau, eps(v))_Q + j(v) >= (f(t), v)_V  for all v}``,
* the strains ``omega_i = eps(u_i)`` satisfy the normal-cone inequality
  ``(tau - sigma_i, omega_i)_Q >= 0`` for admissible ``tau``,
* ``u -> sigma -> omega -> u`` closes (Volterra inversion in strain space
  followed by least-squares displacement recovery),

and measure how the solution moves under perturbations of ``(F, f)``.
All stress integrals go through the strain operator and element areas, never
through the assembled stiffness.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from . import contact as cj
from .fem import ContactData, FESpace, to_mandel
from .history import volterra_resolve


class NoAdmissibleSamples(RuntimeError):
    pass


# --------------------------------------------------------------------------
# V-space helpers

def _gram_lu(space: FESpace):
    lu = getattr(space, "_gram_lu", None)
    if lu is None:
        lu = spla.splu(space.gram.tocsc())
        space._gram_lu = lu
    return lu


def strain_to_displacement(omega: np.ndarray, space: FESpace) -> np.ndarray:
    """Least-squares displacement ``argmin_u sum_T |T| |eps(u)_T - omega_T|^2``.

    ``omega`` is ``(m, 2, 2)`` or Mandel ``(m, 3)``.  Normal equations
    ``G u = E^T W omega``; exact when ``omega`` is compatible.
    """
    om = np.asarray(omega, dtype=float)
    if om.ndim == 3 and om.shape[1:] == (2, 2):
        om = to_mandel(om)
    return _gram_lu(space).solve(space.riesz(om))


def v_norm(u: np.ndarray, space: FESpace) -> float:
    """``||u||_V = ||eps(u)||_Q``."""
    e = space.strains_mandel(u)
    return float(np.sqrt(np.sum(space.areas[:, None] * e * e)))


def dual_norm(load: np.ndarray, space: FESpace) -> float:
    """V-norm of the Riesz representative of a DOF-space load vector."""
    w = _gram_lu(space).solve(np.asarray(load, dtype=float))
    return float(np.sqrt(max(load @ w, 0.0)))


def load_lift(f_vec: np.ndarray, space: FESpace) -> np.ndarray:
    """Element stresses ``g`` (Mandel) with ``(g, eps(v))_Q = f . v`` for all ``v``."""
    return space.strains_mandel(_gram_lu(space).solve(np.asarray(f_vec, dtype=float)))


def _q_norm(space: FESpace, x: np.ndarray) -> float:
    return float(np.sqrt(np.sum(space.areas[:, None] * x * x)))


def _mandel(x):
    x = np.asarray(x, dtype=float)
    return to_mandel(x) if x.ndim >= 3 and x.shape[-2:] == (2, 2) else x


# --------------------------------------------------------------------------
# Sigma(t) membership

@dataclass
class ProbeSet:
    """Probe directions with their strains and ``j`` values, reusable across checks."""

    V: np.ndarray            # (n_dofs, P)
    strains: np.ndarray      # (3 m, P), stacked Mandel
    j: np.ndarray            # (P,)
    strain_norms: np.ndarray  # ||eps(v)||_Q
    norms: np.ndarray        # Euclidean norms of v

    @classmethod
    def build(cls, space: FESpace, contact: ContactData, n_probes: int, u_i=None, rng=None) -> "ProbeSet":
        rng = np.random.default_rng(0) if rng is None else rng
        n = space.n_dofs
        cols = []
        if u_i is not None and np.any(u_i):
            cols += [np.asarray(u_i, dtype=float), -np.asarray(u_i, dtype=float)]
        for d in np.concatenate([contact.normal_dof, contact.tangent_dof]):
            e = np.zeros(n)
            e[d] = 1.0
            cols += [e, -e]
        n_rand = max(n_probes - len(cols), 0)
        n_rand += n_rand % 2
        if n_rand:
            R = rng.standard_normal((n, n_rand // 2))
            cols += list(R.T) + list(-R.T)
        V = np.column_stack(cols) if cols else np.zeros((n, 0))
        S = space.strain_op @ V
        w = np.repeat(space.areas, 3)[:, None]
        return cls(V, S, cj.eval_j_batch(V, contact),
                   np.sqrt(np.sum(w * S * S, axis=0)), np.linalg.norm(V, axis=0))

    @property
    def size(self) -> int:
        return self.V.shape[1]


def sigma_admissibility_values(sigma_i, f_i, space: FESpace, probes: ProbeSet) -> np.ndarray:
    """Normalised ``(sigma, eps(v))_Q + j(v) - (f, v)_V`` for every probe.

    Each value is divided by the Cauchy-Schwarz magnitude
    ``||sigma||_Q ||eps(v)||_Q + ||f|| ||v|| + j(v)``.
    """
    s = _mandel(sigma_i)
    weighted = (space.areas[:, None] * s).ravel()
    f_i = np.asarray(f_i, dtype=float)
    vals = weighted @ probes.strains + probes.j - f_i @ probes.V
    scale = _q_norm(space, s) * probes.strain_norms + np.linalg.norm(f_i) * probes.norms + probes.j
    return vals / np.maximum(scale, 1e-300)


def check_sigma_admissible(sigma_i, f_i, space: FESpace, contact: ContactData, n_probes: int = 500, *,
                           u_i=None, rng=None, probes: ProbeSet | None = None) -> float:
    """Most negative normalised probe value of the ``Sigma(t)`` inequality (0 if none)."""
    if probes is None:
        probes = ProbeSet.build(space, contact, n_probes, u_i=u_i, rng=rng)
    vals = sigma_admissibility_values(sigma_i, f_i, space, probes)
    return float(min(0.0, vals.min(initial=0.0)))


# --------------------------------------------------------------------------
# normal-cone inclusion

def check_inclusion(omega_i, sigma_i, taus: Sequence[np.ndarray], space: FESpace) -> float:
    """Most negative normalised ``(tau - sigma_i, omega_i)_Q`` over ``taus`` (0 if none).

    The normalisation is ``||tau - sigma_i||_Q ||omega_i||_Q``.
    """
    if len(taus) == 0:
        raise NoAdmissibleSamples("no admissible stress samples")
    om = _mandel(omega_i)
    s = _mandel(sigma_i)
    on = _q_norm(space, om)
    worst = 0.0
    for tau in taus:
        d = _mandel(tau) - s
        val = space.q_product(d, om)
        scale = _q_norm(space, d) * on
        if scale > 0:
            worst = min(worst, val / scale)
    return float(worst)


def admissible_samples(candidates: Sequence[np.ndarray], f_i, space: FESpace, probes: ProbeSet,
                       tol: float = 1e-9) -> list:
    """Keep only the candidates that pass the ``Sigma(t_i)`` probe check."""
    keep = []
    for tau in candidates:
        vals = sigma_admissibility_values(tau, f_i, space, probes)
        if vals.min(initial=0.0) >= -tol:
            keep.append(_mandel(tau))
    return keep


def shifted_candidates(stress_m: np.ndarray, lifts: np.ndarray, i: int, sources: Sequence[int],
                       scalings: Sequence[float] = (1.0, 0.5, 0.0), include_raw: bool = True) -> list:
    """``g(t_i) + lam (sigma_j - g(t_j))``: stresses of other steps moved to ``t_i``.

    ``sigma_j - g(t_j)`` is in the load-free set, which is a convex set
    containing 0, so every ``lam`` in [0, 1] gives an element of ``Sigma(t_i)``
    up to the accuracy of ``sigma_j``.  With ``include_raw`` the unshifted
    ``sigma_j`` are added too; those generally fail the check and are
    meant to be filtered.
    """
    out = [stress_m[j].copy() for j in sources] if include_raw else []
    for lam in scalings:
        if lam == 0.0:
            out.append(lifts[i].copy())
            continue
        for j in sources:
            out.append(lifts[i] + lam * (stress_m[j] - lifts[j]))
    return out


# --------------------------------------------------------------------------
# u -> sigma -> omega -> u

def strains_from_stresses(stress_m: np.ndarray, material, k: float) -> np.ndarray:
    """Invert ``sigma_n = D omega_n + k sum_{j<=n} B(t_n - t_j) omega_j`` elementwise.

    ``stress_m`` is ``(N, m, 3)`` Mandel; returns strains of the same shape.
    """
    D = material.elastic_matrix()
    g = np.transpose(stress_m, (0, 2, 1))  # (N, 3, m): one series per element
    om = volterra_resolve(D, material.relaxation, g, k)
    return np.transpose(om, (0, 2, 1))


def duality_roundtrip(traj) -> np.ndarray:
    """Per-step relative error of ``u -> sigma -> omega -> u``."""
    stress_m = to_mandel(traj.stress)
    omega = strains_from_stresses(stress_m, traj.material, traj.dt)
    err = np.zeros(traj.n_steps)
    for i in range(traj.n_steps):
        u_rec = strain_to_displacement(omega[i], traj.space)
        ref = np.linalg.norm(traj.u[i])
        diff = np.linalg.norm(u_rec - traj.u[i])
        err[i] = diff / ref if ref > 0 else diff
    return err


# --------------------------------------------------------------------------
# full report

@dataclass
class AdmissibilityReport:
    """Per-step certificates of a completed run; violations are normalised and <= 0."""

    times: np.ndarray
    sigma_violation: np.ndarray
    inclusion_violation: np.ndarray
    energy_residual: np.ndarray
    complementarity_max: np.ndarray
    roundtrip_error: np.ndarray
    n_probes: int = 0
    n_samples: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def certified(self, tol_violation=1e-6, tol_energy=1e-7, tol_roundtrip=1e-8) -> bool:
        arrays = (self.sigma_violation, self.inclusion_violation, self.energy_residual,
                  self.complementarity_max, self.roundtrip_error)
        return (all(np.all(np.isfinite(a)) for a in arrays)
                and self.sigma_violation.min() >= -tol_violation
                and self.inclusion_violation.min() >= -tol_violation
                and self.energy_residual.max() <= tol_energy
                and self.roundtrip_error.max() <= tol_roundtrip)

    def rows(self):
        for i, t in enumerate(self.times):
            yield (t, self.sigma_violation[i], self.inclusion_violation[i], self.energy_residual[i],
                   self.complementarity_max[i], self.roundtrip_error[i])


def certify_trajectory(traj, n_probes: int = 500, *, n_sources: int = 16, seed: int = 0,
                       sample_tol: float = 1e-9) -> AdmissibilityReport:
    """Run every certificate over all steps of ``traj``."""
    rng = np.random.default_rng(seed)
    space, contact = traj.space, traj.contact
    N = traj.n_steps
    stress_m = to_mandel(traj.stress)
    lifts = np.array([load_lift(traj.loads_f[i], space) for i in range(N)])
    sig = np.zeros(N)
    inc = np.zeros(N)
    counts = np.zeros(N, dtype=int)
    for i in range(N):
        probes = ProbeSet.build(space, contact, n_probes, u_i=traj.u[i], rng=rng)
        sig[i] = check_sigma_admissible(stress_m[i], traj.loads_f[i], space, contact, probes=probes)
        others = [j for j in range(N) if j != i]
        sources = [others[p] for p in np.linspace(0, len(others) - 1, min(n_sources, len(others))).astype(int)] \
            if others else []
        cands = shifted_candidates(stress_m, lifts, i, sources)
        taus = admissible_samples(cands, traj.loads_f[i], space, probes, tol=sample_tol)
        counts[i] = len(taus)
        inc[i] = check_inclusion(traj.strains_mandel(i), stress_m[i], taus, space)
    return AdmissibilityReport(traj.times.copy(), sig, inc, traj.energy_residual.copy(),
                               np.asarray(traj.complementarity, dtype=float).copy(), duality_roundtrip(traj),
                               n_probes, counts)


# --------------------------------------------------------------------------
# continuous dependence on (F, f)

def sup_v_difference(u_a: np.ndarray, u_b: np.ndarray, space: FESpace) -> float:
    """``max_i ||u_a[i] - u_b[i]||_V``."""
    d = np.asarray(u_a) - np.asarray(u_b)
    E = space.strain_op @ d.T  # (3m, N)
    w = np.repeat(space.areas, 3)[:, None]
    return float(np.sqrt(np.max(np.sum(w * E * E, axis=0), initial=0.0)))


def lipschitz_experiment(run: Callable[[float, float], object], base: tuple[float, float],
                         perturbations: Sequence[tuple[float, float]], *, base_run=None) -> list[dict]:
    """Rerun with ``(F + dF, amplitude + df2)`` and report solution/data ratios.

    ``run(F, amplitude)`` returns a trajectory.  The data norm is
    ``||dF||_{L2(gamma3)} + max_i ||df_i||_V`` with the lumped boundary rule.
    """
    F0, a0 = base
    ref = run(F0, a0) if base_run is None else base_run
    space, contact = ref.space, ref.contact
    rows = []
    for dF, df2 in perturbations:
        tr = run(F0 + dF, a0 + df2)
        num = sup_v_difference(tr.u, ref.u, space)
        dF_norm = float(np.sqrt(np.sum(contact.weights * (tr.contact.yield_limit - contact.yield_limit) ** 2)))
        df_norm = max((dual_norm(tr.loads_f[i] - ref.loads_f[i], space) for i in range(ref.n_steps)), default=0.0)
        den = dF_norm + df_norm
        rows.append({"dF": dF, "df2": df2, "numerator": num, "denominator": den,
                     "ratio": num / den if den > 0 else 0.0})
    return rows


def relative_scale_family(base: tuple[float, float], scales: Sequence[float] = (1e-1, 1e-2, 1e-3)):
    """Perturbations ``(s F, s amplitude)`` for each relative scale ``s``."""
    F0, a0 = base
    return [(s * F0, s * a0) for s in scales]


def scaling_equivariance(run: Callable[[float, float], object], base: tuple[float, float],
                         lam: float = 2.0) -> float:
    """Relative deviation of ``u(lam F, lam f)`` from ``lam u(F, f)`` (zero for b = 0)."""
    F0, a0 = base
    u1 = run(F0, a0).u
    u2 = run(lam * F0, lam * a0).u
    return float(np.linalg.norm(u2 - lam * u1) / max(np.linalg.norm(lam * u1), 1e-300))
