"""Plain-text outputs: per-step CSV, field snapshots and a JSON summary."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .solver import Trajectory, averaged_contact_stress


def fmt(x) -> str:
    return format(float(x), ".17g")


TIMESERIES_COLUMNS = [
    "t", "f2y", "min_u_nu", "min_u_y", "max_penetration", "total_normal_force", "max_abs_sigma_tau",
    "energy_residual", "vi_residual", "complementarity_max", "avg_sigma_nu_min", "avg_sigma_nu_max",
]
CERTIFICATE_COLUMNS = ["sigma_violation", "inclusion_violation", "roundtrip_error"]


def timeseries_rows(traj: Trajectory, f2y=None, report=None):
    """Row dicts of :data:`TIMESERIES_COLUMNS` (plus certificate columns when ``report`` is given)."""
    contact = traj.contact
    y_dof = contact.normal_dof
    for i, t in enumerate(traj.times):
        avg_nu, _ = averaged_contact_stress(traj.stress[i], traj.space, contact)
        row = {
            "t": t,
            "f2y": f2y(t) if f2y is not None else math.nan,
            "min_u_nu": traj.u_nu[i].min(initial=np.inf),
            "min_u_y": traj.u[i][y_dof].min(initial=np.inf),
            "max_penetration": np.maximum(traj.u_nu[i], 0.0).max(initial=0.0),
            "total_normal_force": float(contact.weights @ traj.sigma_nu[i]),
            "max_abs_sigma_tau": np.abs(traj.sigma_tau[i]).max(initial=0.0),
            "energy_residual": traj.energy_residual[i],
            "vi_residual": traj.vi_residual[i],
            "complementarity_max": traj.complementarity[i],
            "avg_sigma_nu_min": avg_nu.min(initial=np.inf),
            "avg_sigma_nu_max": avg_nu.max(initial=-np.inf),
        }
        if report is not None:
            row.update(sigma_violation=report.sigma_violation[i], inclusion_violation=report.inclusion_violation[i],
                       roundtrip_error=report.roundtrip_error[i])
        yield row


def emit_timeseries(traj: Trajectory, path, *, f2y=None, report=None) -> Path:
    """One CSV row per step, 17 significant digits."""
    path = Path(path)
    cols = TIMESERIES_COLUMNS + (CERTIFICATE_COLUMNS if report is not None else [])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in timeseries_rows(traj, f2y, report):
            w.writerow([fmt(row[c]) for c in cols])
    return path


def read_timeseries(path) -> dict:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(x) for x in row] for row in r])
    return {c: data[:, k] if len(data) else np.zeros(0) for k, c in enumerate(header)}


def snapshot_text(traj: Trajectory, step_index: int) -> str:
    """Mesh export followed by ``field <name> <count>`` blocks for one step (0-based index)."""
    if not 0 <= step_index < traj.n_steps:
        raise IndexError(f"step {step_index} out of range")
    space, contact = traj.space, traj.contact
    mesh = space.mesh
    disp = space.dofs.expand(traj.u[step_index])
    lines = [mesh.to_text().rstrip("\n"), f"time {fmt(traj.times[step_index])}"]
    lines.append(f"field deformed_nodes {mesh.n_nodes}")
    for i, (p, d) in enumerate(zip(mesh.nodes, disp)):
        lines.append(f"{i} {fmt(p[0] + d[0])} {fmt(p[1] + d[1])}")
    s = traj.stress[step_index]
    lines.append(f"field element_stress {len(s)}")
    for e, se in enumerate(s):
        lines.append(f"{e} {fmt(se[0, 0])} {fmt(se[1, 1])} {fmt(se[0, 1])}")
    lines.append(f"field contact {len(contact.nodes)}")
    for p, node in enumerate(contact.nodes):
        lines.append(f"{node} {fmt(traj.u_nu[step_index, p])} {fmt(traj.sigma_nu[step_index, p])} "
                     f"{fmt(traj.sigma_tau[step_index, p])}")
    return "\n".join(lines) + "\n"


def emit_snapshot(traj: Trajectory, step_index: int, path) -> Path:
    path = Path(path)
    path.write_text(snapshot_text(traj, step_index))
    return path


def read_snapshot_fields(text: str) -> dict:
    """``{name: array}`` of the field blocks (first column is the entity id)."""
    out = {}
    lines = text.splitlines()
    k = 0
    while k < len(lines):
        parts = lines[k].split()
        if parts and parts[0] == "field":
            name, count = parts[1], int(parts[2])
            rows = [[float(x) for x in ln.split()] for ln in lines[k + 1:k + 1 + count]]
            out[name] = np.array(rows)
            k += count + 1
        else:
            k += 1
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def emit_summary(summary: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return path
