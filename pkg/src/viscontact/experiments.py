"""Building and running the configured experiments, and judging their outcome."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import duality
from .config import RunConfig
from .contact import TOL_GAP
from .fem import FESpace, MaterialModel, contact_trace, vertical_arc_traction
from .geometry import build_reference_domain, triangulate
from .history import ConstantKernel
from .solver import SolverConfig, Trajectory, run_simulation

log = logging.getLogger(__name__)

# physical markers of the reference experiment (s)
CLOSURE_MARKER = 2.75
SEPARATION_TIME = 1.5
SATURATION_TIMES = (4.0, 5.0)


@lru_cache(maxsize=8)
def reference_space(h_interior: float, h_contact: float) -> FESpace:
    return FESpace(triangulate(build_reference_domain(), h_interior, h_contact))


def material_for(cfg: RunConfig, b: float | None = None) -> MaterialModel:
    b = cfg.b if b is None else b
    return MaterialModel(cfg.E, cfg.kappa, ConstantKernel(b) if b > 0 else None)


def solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(T_end=cfg.T_end, n_steps=cfg.n_steps, opt_tol=cfg.opt_tol,
                        max_inner_iters=cfg.max_inner_iters, restart_period=cfg.restart_period,
                        vi_probes=cfg.vi_probes, seed=cfg.seed)


def simulate(cfg: RunConfig, *, b: float | None = None, F: float | None = None,
             amplitude: float | None = None, space: FESpace | None = None) -> Trajectory:
    """One run on the reference geometry; keyword overrides leave ``cfg`` untouched."""
    space = reference_space(cfg.h_interior, cfg.h_contact) if space is None else space
    contact = contact_trace(space, cfg.F if F is None else F)
    loads = vertical_arc_traction(cfg.amplitude if amplitude is None else amplitude, cfg.shape)
    return run_simulation(space, material_for(cfg, b), loads, contact, solver_config(cfg))


def contact_closure_time(traj: Trajectory, tol_gap: float = TOL_GAP) -> float | None:
    """First time after an initial separation at which every contact node has ``u_nu >= -tol_gap``.

    ``None`` when the body never separates or never closes again.
    """
    closed = np.all(traj.u_nu >= -tol_gap, axis=1)
    opened = np.flatnonzero(~closed)
    if not len(opened):
        return None
    after = np.flatnonzero(closed[opened[0]:])
    return float(traj.times[opened[0] + after[0]]) if len(after) else None


def _at(traj: Trajectory, t: float) -> int | None:
    i = traj.step_of_time(t)
    return i if abs(traj.times[i] - t) <= 0.5 * traj.dt + 1e-12 else None


@dataclass
class RunOutcome:
    name: str
    traj: Trajectory
    report: duality.AdmissibilityReport | None = None
    t_c: float | None = None
    checks: dict = field(default_factory=dict)

    @property
    def max_penetration(self) -> float:
        return float(np.max(np.maximum(self.traj.u_nu, 0.0), initial=0.0))


def run_checks(traj: Trajectory, cfg: RunConfig, report=None, *, reference_markers: bool = False) -> dict:
    """Pass/fail booleans for one trajectory."""
    F = float(np.max(traj.contact.yield_limit, initial=0.0))
    checks = {
        "vi": bool(traj.vi_residual.min(initial=0.0) >= -cfg.tol_vi),
        "energy": bool(traj.energy_residual.max(initial=0.0) <= cfg.tol_energy),
        "frictionless": bool(np.abs(traj.sigma_tau).max(initial=0.0) <= cfg.tol_tangential * F),
        "complementarity": bool(traj.complementarity.max(initial=0.0) <= cfg.tol_complementarity * F),
    }
    if report is not None:
        checks["certified"] = bool(report.certified(cfg.tol_violation, cfg.tol_energy, cfg.tol_roundtrip))
    if reference_markers:
        i = _at(traj, SEPARATION_TIME)
        if i is not None:
            checks["separation_1.5s"] = bool(np.all(np.abs(traj.sigma_nu[i]) <= 5e-3 * F)
                                             and np.all(traj.u_nu[i] < 0))
        for t in SATURATION_TIMES:
            i = _at(traj, t)
            if i is not None:
                checks[f"saturation_{t:g}s"] = bool(np.all(traj.u_nu[i] > TOL_GAP)
                                                    and np.all(np.abs(traj.sigma_nu[i] + F) <= 0.02 * F))
    return checks


def execute(cfg: RunConfig, name: str, b: float) -> RunOutcome:
    t0 = time.perf_counter()
    traj = simulate(cfg, b=b)
    report = duality.certify_trajectory(traj, cfg.sigma_probes, seed=cfg.seed) if cfg.certify else None
    out = RunOutcome(name, traj, report, contact_closure_time(traj))
    out.checks = run_checks(traj, cfg, report, reference_markers=b > 0)
    log.info("%s: %d steps in %.2fs (t_c=%s)", name, cfg.n_steps, time.perf_counter() - t0, out.t_c)
    return out


def relaxation_ordering(elastic: RunOutcome, visco: RunOutcome, marker: float = CLOSURE_MARKER) -> bool:
    """``t_c(viscoelastic) < marker < t_c(elastic)``; an elastic body that never closes counts as later."""
    if visco.t_c is None:
        return False
    te = np.inf if elastic.t_c is None else elastic.t_c
    return bool(visco.t_c < marker < te)


@dataclass
class LipschitzOutcome:
    rows: list
    equivariance_error: float
    window: float

    @property
    def ratios(self) -> list:
        return [r["ratio"] for r in self.rows]

    @property
    def spread(self) -> float:
        r = [x for x in self.ratios if x > 0]
        return max(r) / min(r) if r else np.inf

    @property
    def checks(self) -> dict:
        return {"lipschitz_window": bool(self.spread <= self.window),
                "scaling_equivariance": bool(self.equivariance_error <= 1e-8)}


def lipschitz_study(cfg: RunConfig, lam: float = 2.0) -> LipschitzOutcome:
    """Ratios for the configured relative scales, plus the elastic scaling check."""
    base = (cfg.F, cfg.amplitude)
    rows = duality.lipschitz_experiment(lambda F, a: simulate(cfg, F=F, amplitude=a), base,
                                        duality.relative_scale_family(base, cfg.lipschitz_scales))
    for r, s in zip(rows, cfg.lipschitz_scales):
        r["scale"] = s
    eq = duality.scaling_equivariance(lambda F, a: simulate(cfg, b=0.0, F=F, amplitude=a), base, lam)
    return LipschitzOutcome(rows, eq, cfg.lipschitz_window)
