"""Lumped rigid-plastic contact term ``j(v) = sum_p w_p F_p (v_nu(p))^+``."""
from __future__ import annotations

import numpy as np

from .fem import ContactData

TOL_GAP = 1e-8


def eval_j(v: np.ndarray, contact: ContactData) -> float:
    return float(np.sum(contact.alpha * np.maximum(contact.normal(v), 0.0)))


def eval_j_batch(V: np.ndarray, contact: ContactData) -> np.ndarray:
    """``j`` of each column of ``V`` (shape ``(n_dofs, P)``)."""
    vn = contact.normal_sign[:, None] * V[contact.normal_dof]
    return contact.alpha @ np.maximum(vn, 0.0)


def prox_scalar(z, alpha):
    """Minimiser of ``alpha x^+ + (x - z)^2 / 2``."""
    z = np.asarray(z, dtype=float)
    return np.where(z > alpha, z - alpha, np.where(z >= 0.0, 0.0, z))


def prox_j(z: np.ndarray, step: float, contact: ContactData) -> np.ndarray:
    """Proximal map of ``step * j``; DOFs outside the contact normals pass through."""
    if not step > 0:
        raise ValueError("step must be positive")
    out = np.array(z, dtype=float, copy=True)
    zn = contact.normal_sign * out[contact.normal_dof]
    out[contact.normal_dof] = contact.normal_sign * prox_scalar(zn, step * contact.alpha)
    return out


def subgradient_j(v: np.ndarray, contact: ContactData, theta: float = 0.5) -> np.ndarray:
    """An element of the subdifferential of ``j`` at ``v``.

    Where ``v_nu = 0`` the choice ``theta`` in [0, 1] picks the point of the
    interval ``[0, alpha]``.
    """
    g = np.zeros(len(v))
    vn = contact.normal(v)
    s = np.where(vn > 0, 1.0, np.where(vn < 0, 0.0, theta))
    g[contact.normal_dof] = contact.normal_sign * contact.alpha * s
    return g


def complementarity_residual_nodal(u_nu, sigma_nu, F, tol_gap: float = TOL_GAP) -> np.ndarray:
    """Nodewise violation of the rigid-plastic contact conditions.

    Zero exactly when: ``sigma_nu = 0`` on separated nodes, ``-F <= sigma_nu
    <= 0`` everywhere, and ``sigma_nu = -F`` on penetrating nodes.
    """
    u_nu = np.asarray(u_nu, dtype=float)
    s = np.asarray(sigma_nu, dtype=float)
    F = np.broadcast_to(np.asarray(F, dtype=float), s.shape)
    separated = np.where(u_nu < -tol_gap, np.abs(s), 0.0)
    box = np.maximum.reduce([s, -F - s, np.zeros_like(s)])
    yielded = np.where(u_nu > tol_gap, np.abs(s + F), 0.0)
    return np.maximum.reduce([separated, box, yielded])


def complementarity_residual(u: np.ndarray, sigma_nu, contact: ContactData, tol_gap: float = TOL_GAP) -> np.ndarray:
    return complementarity_residual_nodal(contact.normal(u), sigma_nu, contact.yield_limit, tol_gap)
