"""Time stepping: one nonsmooth convex minimisation per step.

Step ``i`` minimises

    L_i(w) = 1/2 w^T (K + k B0) w + j(w) + (H_{i-1} - f_i)^T w

where ``B0`` is the lag-zero memory operator (``b G`` for a constant kernel)
and ``H_{i-1}`` the known part of the memory sum.  The minimiser is
certified through the proximal fixed-point residual.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import contact as cj
from .fem import (ContactData, FESpace, LoadSpec, MaterialModel, assemble_load, assemble_stiffness,
                  reconstruct_stress_field)
from .geometry import Mesh
from .history import HistoryState, history_append, lag_operator, memory_load

log = logging.getLogger(__name__)


class NoConvergence(RuntimeError):
    def __init__(self, message, iterate=None, residual=None, step=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class SolverConfig:
    T_end: float = 5.0
    n_steps: int = 100
    opt_tol: float = 1e-9
    max_inner_iters: int = 20000
    restart_period: int = 0  # 0: adaptive restarts only
    vi_probes: int = 64
    refine_active_set: bool = True
    check_every: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.T_end > 0:
            raise ValueError("T_end must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.opt_tol > 0:
            raise ValueError("opt_tol must be positive")

    @property
    def dt(self) -> float:
        return self.T_end / self.n_steps


def power_iteration(M, rtol: float = 1e-6, max_iter: int = 100_000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix.

    Stops when the eigen-residual ``||M x - lam x||`` drops below ``rtol *
    lam``; a bare change-in-``lam`` test stalls early when the top of the
    spectrum is clustered.
    """
    n = M.shape[0]
    if n == 0:
        return 0.0
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = M @ x
        lam = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        if np.linalg.norm(y - lam * x) <= rtol * lam:
            return lam
        x = y / ny
    return lam


class StepProblem:
    """``L(w) = 1/2 w^T M w + j(w) + c^T w`` with exact prox of ``j``."""

    def __init__(self, M, c, contact: ContactData, lipschitz: float | None = None):
        self.M = M
        self.c = np.asarray(c, dtype=float)
        self.contact = contact
        self.L = lipschitz if lipschitz is not None else power_iteration(M)
        self.step = 1.0 / self.L

    def value(self, w, Mw=None) -> float:
        Mw = self.M @ w if Mw is None else Mw
        return float(0.5 * w @ Mw + cj.eval_j(w, self.contact) + self.c @ w)

    def gradient(self, w):
        return self.M @ w + self.c

    def prox_grad(self, w, g=None):
        g = self.gradient(w) if g is None else g
        return cj.prox_j(w - self.step * g, self.step, self.contact)

    def fixed_point_residual(self, w) -> float:
        return float(np.linalg.norm(w - self.prox_grad(w)))

    def certified(self, w, tol) -> tuple[bool, float]:
        r = self.fixed_point_residual(w)
        return r <= tol * (1.0 + np.linalg.norm(w)), r


@dataclass
class StepResult:
    u: np.ndarray
    iterations: int
    residual: float
    objective: list = field(default_factory=list)
    refined: bool = False


def _contact_state(problem: StepProblem, w) -> np.ndarray:
    z = problem.contact.normal(w)
    return np.sign(z).astype(np.int8)


def refine_active_set(problem: StepProblem, w, max_sweeps: int = 10) -> np.ndarray | None:
    """Primal-dual active-set iteration started from the contact state of ``w``.

    Each contact node is separated (no force), stuck (``u_nu = 0``) or
    yielding (force ``alpha``).  Returns the exact minimiser for the final
    state, or ``None`` if the states keep switching.
    """
    c = problem.contact
    nd, sgn, alpha = c.normal_dof, c.normal_sign, c.alpha
    state = _contact_state(problem, w)  # -1 separated, 0 stuck, +1 yielding
    n = len(w)
    M = sp.csr_matrix(problem.M)
    seen = set()
    for _ in range(max_sweeps):
        key = state.tobytes()
        if key in seen:
            return None
        seen.add(key)
        fixed = nd[state == 0]
        free = np.setdiff1d(np.arange(n), fixed)
        rhs = -problem.c.copy()
        yielding = state > 0
        rhs[nd[yielding]] -= sgn[yielding] * alpha[yielding]
        u = np.zeros(n)
        Mff = M[free][:, free].tocsc()
        u[free] = spla.splu(Mff).solve(rhs[free])
        r = M @ u + problem.c
        mu = -sgn * r[nd]
        zn = sgn * u[nd]
        new = state.copy()
        new[(state < 0) & (zn > 0)] = 0
        new[(state > 0) & (zn < 0)] = 0
        new[(state == 0) & (mu < 0)] = -1
        new[(state == 0) & (mu > alpha)] = 1
        if np.array_equal(new, state):
            return u
        state = new
    return None


def minimize_step(K, G, b, k, H_prev, f_i, warm_start, cfg: SolverConfig, contact: ContactData, *,
                  M=None, lipschitz=None) -> StepResult:
    """Minimise the step functional by accelerated proximal gradient.

    Momentum is reset whenever the objective would increase (the rejected
    point is discarded, so accepted objectives never increase) and, if
    ``cfg.restart_period`` is set, every that many iterations.  When the
    contact state has settled an active-set solve is attempted; it is kept
    only if it passes the same fixed-point certificate.
    """
    if M is None:
        M = (K + (k * b) * G) if b else K
    problem = StepProblem(M, np.asarray(H_prev, dtype=float) - np.asarray(f_i, dtype=float), contact, lipschitz)
    return _apg(problem, np.asarray(warm_start, dtype=float), cfg)


def _apg(problem: StepProblem, x0, cfg: SolverConfig) -> StepResult:
    tol = cfg.opt_tol
    x = problem.prox_grad(x0)
    Mx = problem.M @ x
    Fx = problem.value(x, Mx)
    objective = [Fx]
    y, t = x.copy(), 1.0
    fresh = True  # y == x, next step is a plain proximal-gradient step
    last_state = None
    tried = set()
    res = math.inf
    for it in range(1, cfg.max_inner_iters + 1):
        x_new = problem.prox_grad(y)
        Mx_new = problem.M @ x_new
        F_new = problem.value(x_new, Mx_new)
        if F_new > Fx + 1e-15 * (abs(Fx) + 1.0) and not fresh:
            y, t, fresh = x.copy(), 1.0, True
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, Mx, Fx, t, fresh = x_new, Mx_new, F_new, t_new, False
        if F_new <= objective[-1]:
            objective.append(F_new)
        if cfg.restart_period and it % cfg.restart_period == 0:
            y, t, fresh = x.copy(), 1.0, True

        if it % cfg.check_every:
            continue
        g = Mx + problem.c
        res = float(np.linalg.norm(x - problem.prox_grad(x, g)))
        if res <= tol * (1.0 + np.linalg.norm(x)):
            if cfg.refine_active_set:
                u = refine_active_set(problem, x)
                if u is not None:
                    ok, r = problem.certified(u, tol)
                    if ok and r < res:
                        objective.append(min(objective[-1], problem.value(u)))
                        return StepResult(u, it, r, objective, refined=True)
            return StepResult(x, it, res, objective)
        if cfg.refine_active_set:
            state = _contact_state(problem, x)
            key = state.tobytes()
            if last_state is not None and np.array_equal(state, last_state) and key not in tried:
                tried.add(key)
                u = refine_active_set(problem, x)
                if u is not None:
                    ok, r = problem.certified(u, tol)
                    if ok:
                        objective.append(min(objective[-1], problem.value(u)))
                        return StepResult(u, it, r, objective, refined=True)
            last_state = state
    raise NoConvergence(f"no convergence in {cfg.max_inner_iters} iterations (residual {res:.3e})",
                        iterate=x, residual=res)


def cost_value(w, K, G, b, k, H_prev, f_i, contact: ContactData) -> float:
    w = np.asarray(w, dtype=float)
    quad = w @ (K @ w) + (k * b) * (w @ (G @ w))
    return float(0.5 * quad + cj.eval_j(w, contact) + (np.asarray(H_prev) - f_i) @ w)


# --------------------------------------------------------------------------
# certificates

def _vi_probes(u, contact: ContactData, n_random: int, rng) -> np.ndarray:
    n = len(u)
    scale = max(float(np.linalg.norm(u)), 1e-6)
    cols = [np.zeros(n), 2.0 * u]
    if n_random:
        R = rng.standard_normal((n, n_random))
        R *= scale / np.linalg.norm(R, axis=0)
        cols.extend((u[:, None] + R).T)
    delta = max(float(np.max(np.abs(u))), 1e-6)
    for d in contact.normal_dof:
        for s in (1.0, -1.0):
            v = u.copy()
            v[d] += s * delta
            cols.append(v)
    return np.column_stack(cols)


def vi_values(u, residual_vec, f, contact: ContactData, V) -> tuple[np.ndarray, np.ndarray]:
    """Left-minus-right of the discrete VI at each column of ``V`` and a magnitude scale."""
    D = V - u[:, None]
    ju = cj.eval_j(u, contact)
    jv = cj.eval_j_batch(V, contact)
    internal_vec = residual_vec + f
    vals = residual_vec @ D + jv - ju
    # Cauchy-Schwarz bound on the magnitude of the terms
    scale = (np.linalg.norm(internal_vec) + np.linalg.norm(f)) * np.linalg.norm(D, axis=0) + jv + ju
    return vals, scale


def verify_vi(u_i, K, G, b, k, H_prev, f_i, n_probes: int, contact: ContactData, *, M=None,
              rng=None, normalized: bool = True) -> float:
    """Most negative value of the discrete VI over probe vectors (0 if none).

    The memory term includes the current step's self-contribution, so the
    operator applied to ``u_i`` is ``K + k b G`` plus ``H_prev``.
    """
    u = np.asarray(u_i, dtype=float)
    if M is None:
        M = (K + (k * b) * G) if b else K
    rng = np.random.default_rng(0) if rng is None else rng
    r = M @ u + H_prev - f_i
    V = _vi_probes(u, contact, n_probes, rng)
    vals, scale = vi_values(u, r, np.asarray(f_i, dtype=float), contact, V)
    if normalized:
        vals = vals / np.maximum(scale, 1e-300)
    return float(min(0.0, vals.min()))


def energy_residual(u, M, H_prev, f, contact: ContactData) -> float:
    """Relative defect of ``(sigma, eps(u))_Q + j(u) = (f, u)_V``."""
    terms = np.array([u @ (M @ u), u @ H_prev, cj.eval_j(u, contact), -(f @ u)])
    denom = np.sum(np.abs(terms))
    return 0.0 if denom == 0 else float(abs(terms.sum()) / denom)


def contact_reaction(u, M, H_prev, f, contact: ContactData) -> tuple[np.ndarray, np.ndarray]:
    """Nodal contact tractions ``(sigma_nu, sigma_tau)`` from the discrete equilibrium.

    The residual ``M u + H_prev - f`` is the lumped boundary integral of the
    traction ``sigma nu`` on gamma3; dividing by the lumped weights gives
    nodal values.
    """
    r = M @ u + H_prev - f
    sigma_nu = contact.normal_sign * r[contact.normal_dof] / contact.weights
    sigma_tau = r[contact.tangent_dof] / contact.weights
    return sigma_nu, sigma_tau


def averaged_contact_stress(stress, space: FESpace, contact: ContactData) -> tuple[np.ndarray, np.ndarray]:
    """Nodal ``(sigma_nu, sigma_tau)`` by area-weighted averaging of the element
    stresses of triangles owning a gamma3 edge at the node."""
    from .geometry import GAMMA3

    mesh = space.mesh
    edges = mesh.edges_tagged(GAMMA3)
    key = {tuple(sorted(e)): i for i, e in enumerate(map(tuple, edges))}
    owner = {}
    for t, tri in enumerate(mesh.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            kk = tuple(sorted((int(a), int(b))))
            if kk in key:
                owner[kk] = t
    pos = {int(n): i for i, n in enumerate(contact.nodes)}
    num_nu = np.zeros(len(contact.nodes))
    num_tau = np.zeros(len(contact.nodes))
    den = np.zeros(len(contact.nodes))
    nu = np.array([0.0, -1.0])
    tau = np.array([1.0, 0.0])
    for kk, t in owner.items():
        s = stress[t]
        tr = s @ nu
        for node in kk:
            i = pos[node]
            num_nu[i] += space.areas[t] * (tr @ nu)
            num_tau[i] += space.areas[t] * (tr @ tau)
            den[i] += space.areas[t]
    return num_nu / den, num_tau / den


# --------------------------------------------------------------------------
# the time loop

@dataclass
class Trajectory:
    """Everything produced by :func:`run_simulation`; arrays are indexed by step."""

    space: FESpace
    material: MaterialModel
    loads: LoadSpec
    contact: ContactData
    cfg: SolverConfig
    K: object
    M: object
    times: np.ndarray
    u: np.ndarray
    loads_f: np.ndarray
    memory: np.ndarray  # H_{i-1}
    stress: np.ndarray  # (N, m, 2, 2)
    u_nu: np.ndarray
    sigma_nu: np.ndarray
    sigma_tau: np.ndarray
    energy_residual: np.ndarray
    vi_residual: np.ndarray
    complementarity: np.ndarray
    iterations: np.ndarray
    fixed_point: np.ndarray
    history: HistoryState
    wall_clock: float = 0.0

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return self.cfg.dt

    def step_of_time(self, t: float) -> int:
        """0-based index of the step whose time is closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def strains_mandel(self, i: int) -> np.ndarray:
        return self.space.strains_mandel(self.u[i])


def step_matrix(K, kernel, k: float, space: FESpace):
    if kernel is None or (kernel.is_constant and kernel.b == 0):
        return K
    return (K + k * lag_operator(kernel, 0.0, space)).tocsr()


def run_simulation(mesh, material: MaterialModel, loads: LoadSpec, contact: ContactData,
                   cfg: SolverConfig, *, progress=None) -> Trajectory:
    """Solve all ``cfg.n_steps`` steps; deterministic for fixed inputs."""
    t0 = time.perf_counter()
    space = mesh if isinstance(mesh, FESpace) else FESpace(mesh)
    k = cfg.dt
    N = cfg.n_steps
    K = assemble_stiffness(space, material)
    kernel = material.relaxation
    M = step_matrix(K, kernel, k, space)
    L = power_iteration(M, seed=cfg.seed)
    n = space.n_dofs
    from .history import ConstantKernel

    hist = HistoryState.empty(kernel if kernel is not None else ConstantKernel(0.0), k, n)
    rng = np.random.default_rng(cfg.seed)
    nc = len(contact.nodes)
    out = {name: np.zeros((N, n)) for name in ("u", "f", "H")}
    u_nu = np.zeros((N, nc))
    s_nu = np.zeros((N, nc))
    s_tau = np.zeros((N, nc))
    stress = np.zeros((N, space.n_triangles, 2, 2))
    energy = np.zeros(N)
    vi = np.zeros(N)
    comp = np.zeros(N)
    iters = np.zeros(N, dtype=np.int64)
    fpr = np.zeros(N)
    u_prev = np.zeros(n)
    times = k * np.arange(1, N + 1)
    for i in range(N):
        f_i = assemble_load(space, loads, times[i])
        H_prev = memory_load(hist, space)
        problem = StepProblem(M, H_prev - f_i, contact, L)
        try:
            res = _apg(problem, u_prev, cfg)
        except NoConvergence as exc:
            exc.step = i + 1
            raise
        u = res.u
        hist = history_append(hist, u, space)
        stress[i] = reconstruct_stress_field(u, hist, space, material, step=i + 1)
        out["u"][i], out["f"][i], out["H"][i] = u, f_i, H_prev
        u_nu[i] = contact.normal(u)
        s_nu[i], s_tau[i] = contact_reaction(u, M, H_prev, f_i, contact)
        energy[i] = energy_residual(u, M, H_prev, f_i, contact)
        r = M @ u + H_prev - f_i
        vals, scale = vi_values(u, r, f_i, contact, _vi_probes(u, contact, cfg.vi_probes, rng))
        vi[i] = float(min(0.0, (vals / np.maximum(scale, 1e-300)).min()))
        comp[i] = float(np.max(cj.complementarity_residual(u, s_nu[i], contact), initial=0.0))
        iters[i], fpr[i] = res.iterations, res.residual
        u_prev = u
        if progress is not None:
            progress(i + 1, N)
        log.debug("step %d t=%.3f iters=%d refined=%s", i + 1, times[i], res.iterations, res.refined)
    return Trajectory(space, material, loads, contact, cfg, K, M, times, out["u"], out["f"], out["H"],
                      stress, u_nu, s_nu, s_tau, energy, vi, comp, iters, fpr, hist,
                      time.perf_counter() - t0)
