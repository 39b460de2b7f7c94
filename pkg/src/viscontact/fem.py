"""P1 assembly: stiffness, strain Gram matrix, loads, contact trace, stresses.

Strains and stresses are handled internally in Mandel notation
``(w11, w22, sqrt(2) w12)`` so that Frobenius products of symmetric tensors
are plain dot products and fourth-order tensors become symmetric 3x3
matrices.  Public functions taking or returning tensors use ``(..., 2, 2)``
arrays.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .geometry import GAMMA1, GAMMA3, Mesh

SQRT2 = math.sqrt(2.0)


class SingularMaterial(ValueError):
    pass


class HistoryMismatch(ValueError):
    pass


# --------------------------------------------------------------------------
# tensors

def to_mandel(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.stack([t[..., 0, 0], t[..., 1, 1], SQRT2 * t[..., 0, 1]], axis=-1)


def from_mandel(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    off = m[..., 2] / SQRT2
    return np.stack([np.stack([m[..., 0], off], -1), np.stack([off, m[..., 1]], -1)], -2)


@dataclass(frozen=True)
class MaterialModel:
    """Isotropic plane-strain elasticity plus a relaxation kernel.

    ``relaxation`` is any kernel from :mod:`viscontact.history`; ``None``
    means purely elastic.
    """

    young_E: float
    poisson_kappa: float
    relaxation: object = None

    def __post_init__(self):
        if not self.young_E > 0:
            raise ValueError("young_E must be positive")
        if not self.poisson_kappa < 0.5:
            raise SingularMaterial(f"poisson_kappa={self.poisson_kappa}: plane-strain tensor is singular for kappa >= 0.5")
        if not self.poisson_kappa > 0:
            raise ValueError("poisson_kappa must lie in (0, 0.5)")

    @property
    def lame_lambda(self) -> float:
        E, k = self.young_E, self.poisson_kappa
        return E * k / ((1 + k) * (1 - 2 * k))

    @property
    def shear_factor(self) -> float:
        """``E/(1+kappa)``; also the coercivity constant of the tensor."""
        return self.young_E / (1 + self.poisson_kappa)

    @property
    def coercivity(self) -> float:
        return self.shear_factor

    def elastic_matrix(self) -> np.ndarray:
        trace = np.array([1.0, 1.0, 0.0])
        return self.lame_lambda * np.outer(trace, trace) + self.shear_factor * np.eye(3)


def elasticity_apply(omega: np.ndarray, material: MaterialModel) -> np.ndarray:
    """Image of the symmetric strain(s) ``omega`` (shape ``(..., 2, 2)``)."""
    omega = np.asarray(omega, dtype=float)
    tr = omega[..., 0, 0] + omega[..., 1, 1]
    return material.lame_lambda * tr[..., None, None] * np.eye(2) + material.shear_factor * omega


# --------------------------------------------------------------------------
# degrees of freedom

@dataclass(frozen=True, eq=False)
class DofMap:
    """Two DOFs (x, y) per node off gamma1; ``node_dofs[n] = (-1, -1)`` when clamped."""

    node_dofs: np.ndarray
    n_dofs: int

    @property
    def dof_nodes(self) -> np.ndarray:
        nodes, comps = np.nonzero(self.node_dofs >= 0)
        out = np.empty(self.n_dofs, dtype=np.int64)
        out[self.node_dofs[nodes, comps]] = nodes
        return out

    def expand(self, u: np.ndarray) -> np.ndarray:
        """DOF vector to nodal displacement array ``(n_nodes, 2)``, zero on gamma1."""
        out = np.zeros(self.node_dofs.shape)
        mask = self.node_dofs >= 0
        out[mask] = np.asarray(u)[self.node_dofs[mask]]
        return out


def free_dof_map(mesh: Mesh) -> DofMap:
    clamped = np.zeros(mesh.n_nodes, dtype=bool)
    clamped[mesh.nodes_tagged(GAMMA1)] = True
    node_dofs = -np.ones((mesh.n_nodes, 2), dtype=np.int64)
    free = np.flatnonzero(~clamped)
    node_dofs[free, 0] = 2 * np.arange(len(free))
    node_dofs[free, 1] = 2 * np.arange(len(free)) + 1
    node_dofs.setflags(write=False)
    return DofMap(node_dofs, 2 * len(free))


# --------------------------------------------------------------------------
# discrete space

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("VISCONTACT_THREADS", "1")))
    except ValueError:
        return 1


class FESpace:
    """Mesh + DOF map + the element strain operator.

    ``strain_op`` maps a DOF vector to the stacked Mandel strains of all
    triangles (shape ``3 * n_triangles``); it is the only place P1 shape
    function gradients enter.
    """

    def __init__(self, mesh: Mesh, dofs: DofMap | None = None):
        self.mesh = mesh
        self.dofs = dofs if dofs is not None else free_dof_map(mesh)
        p = mesh.nodes[mesh.triangles]
        x, y = p[..., 0], p[..., 1]
        area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
        self.areas = 0.5 * area2
        # gradients of the three barycentric shape functions
        dNdx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / area2[:, None]
        dNdy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / area2[:, None]
        m = mesh.n_triangles
        B = np.zeros((m, 3, 6))
        B[:, 0, 0::2] = dNdx
        B[:, 1, 1::2] = dNdy
        B[:, 2, 0::2] = dNdy / SQRT2
        B[:, 2, 1::2] = dNdx / SQRT2
        self.B = B
        self.local_dofs = self.dofs.node_dofs[mesh.triangles].reshape(m, 6)
        rows = np.repeat(np.arange(3 * m).reshape(m, 3, 1), 6, axis=2)
        cols = np.broadcast_to(self.local_dofs[:, None, :], (m, 3, 6))
        keep = cols >= 0
        self.strain_op = sp.csr_matrix(
            (B[keep], (rows[keep], cols[keep])), shape=(3 * m, self.dofs.n_dofs))
        self._gram = None

    @property
    def n_dofs(self) -> int:
        return self.dofs.n_dofs

    @property
    def n_triangles(self) -> int:
        return self.mesh.n_triangles

    def strains_mandel(self, u: np.ndarray) -> np.ndarray:
        """Element strains of one DOF vector ``(m, 3)`` or a batch ``(n_dofs, P) -> (m, 3, P)``."""
        e = self.strain_op @ u
        return e.reshape((self.n_triangles, 3) + np.shape(u)[1:])

    def strains(self, u: np.ndarray) -> np.ndarray:
        return from_mandel(self.strains_mandel(u))

    def q_product(self, sigma_mandel: np.ndarray, omega_mandel: np.ndarray) -> float:
        """``(sigma, omega)_Q`` for element-constant fields."""
        return float(np.sum(self.areas[:, None] * sigma_mandel * omega_mandel))

    def riesz(self, stress_mandel: np.ndarray) -> np.ndarray:
        """DOF vector ``v -> (stress, eps(v))_Q``."""
        return self.strain_op.T @ (self.areas[:, None] * stress_mandel).ravel()

    def assemble(self, tensor: np.ndarray) -> sp.csr_matrix:
        """Global matrix of ``(u, v) -> int D eps(u) . eps(v)``.

        ``tensor`` is a 3x3 Mandel matrix or one per triangle ``(m, 3, 3)``.
        The result is symmetric bit-for-bit and independent of the thread
        count (chunks are concatenated in element order).
        """
        m = self.n_triangles
        D = np.broadcast_to(np.asarray(tensor, dtype=float), (m, 3, 3))
        n_chunks = min(_threads(), m)
        bounds = np.linspace(0, m, n_chunks + 1).astype(int)

        def chunk(c):
            s = slice(bounds[c], bounds[c + 1])
            B = self.B[s]
            Ke = self.areas[s, None, None] * np.einsum("eki,ekl,elj->eij", B, D[s], B)
            return 0.5 * (Ke + Ke.transpose(0, 2, 1))

        if n_chunks > 1:
            with ThreadPoolExecutor(n_chunks) as ex:
                Ke = np.concatenate(list(ex.map(chunk, range(n_chunks))))
        else:
            Ke = chunk(0)
        ld = self.local_dofs
        rows = np.broadcast_to(ld[:, :, None], Ke.shape)
        cols = np.broadcast_to(ld[:, None, :], Ke.shape)
        keep = (rows >= 0) & (cols >= 0)
        n = self.n_dofs
        K = sp.coo_matrix((Ke[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
        K.sum_duplicates()
        K = ((K + K.T) * 0.5).tocsr()
        K.sort_indices()
        return K

    @property
    def gram(self) -> sp.csr_matrix:
        if self._gram is None:
            self._gram = self.assemble(np.eye(3))
        return self._gram


def assemble_stiffness(space: FESpace, material: MaterialModel) -> sp.csr_matrix:
    if material.poisson_kappa >= 0.5:
        raise SingularMaterial("kappa >= 0.5")
    return space.assemble(material.elastic_matrix())


def assemble_strain_gram(space: FESpace) -> sp.csr_matrix:
    return space.gram


# --------------------------------------------------------------------------
# loads

VectorField = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class LoadSpec:
    """Body force ``f0(x, t)`` and traction ``f2(x, t)`` (on the load arc only).

    Both callables take points ``(n, 2)`` and a time, returning ``(n, 2)``;
    ``None`` means identically zero.
    """

    body_force: VectorField | None = None
    traction: VectorField | None = None


def vertical_arc_traction(amplitude: float = 10.0, shape: Callable[[float], float] = math.sin) -> LoadSpec:
    """``f2 = (0, amplitude * shape(t))`` on the load arc, no body force."""

    def traction(x, t):
        out = np.zeros((len(x), 2))
        out[:, 1] = amplitude * shape(t)
        return out

    return LoadSpec(body_force=None, traction=traction)


def assemble_load(space: FESpace, loads: LoadSpec, t: float) -> np.ndarray:
    mesh, dofs = space.mesh, space.dofs
    nodal = np.zeros((mesh.n_nodes, 2))
    if loads.body_force is not None:
        # vertex quadrature: each vertex carries a third of the area
        tri = mesh.triangles
        vals = loads.body_force(mesh.nodes[tri.ravel()], t).reshape(len(tri), 3, 2)
        np.add.at(nodal, tri, space.areas[:, None, None] / 3.0 * vals)
    if loads.traction is not None:
        edges = mesh.boundary_edges[mesh.load_edges]
        if len(edges):
            lengths = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
            for end in (0, 1):
                vals = loads.traction(mesh.nodes[edges[:, end]], t)
                np.add.at(nodal, edges[:, end], 0.5 * lengths[:, None] * vals)
    f = np.zeros(dofs.n_dofs)
    mask = dofs.node_dofs >= 0
    f[dofs.node_dofs[mask]] = nodal[mask]
    return f


# --------------------------------------------------------------------------
# contact zone

@dataclass(frozen=True, eq=False)
class ContactData:
    """Lumped description of gamma3.

    For node ``p``: ``v_nu = normal_sign[p] * v[normal_dof[p]]`` and the
    tangential component is ``v[tangent_dof[p]]`` (the contact zone is flat
    with normal ``(0, -1)``).
    """

    nodes: np.ndarray
    weights: np.ndarray
    yield_limit: np.ndarray
    normal_dof: np.ndarray
    normal_sign: np.ndarray
    tangent_dof: np.ndarray

    def __post_init__(self):
        if np.any(self.yield_limit < 0):
            raise ValueError("yield limit must be nonnegative")
        if np.any(self.weights <= 0):
            raise ValueError("lumped weights must be positive")

    @property
    def alpha(self) -> np.ndarray:
        """Nodal yield force ``weight * F``."""
        return self.weights * self.yield_limit

    def normal(self, u: np.ndarray) -> np.ndarray:
        return self.normal_sign * np.asarray(u)[self.normal_dof]

    def with_yield_limit(self, F) -> "ContactData":
        F = np.broadcast_to(np.asarray(F, dtype=float), self.weights.shape).copy()
        return ContactData(self.nodes, self.weights, F, self.normal_dof, self.normal_sign, self.tangent_dof)


def contact_trace(space: FESpace, yield_limit=10.0) -> ContactData:
    """Lumped contact data for gamma3 with yield limit ``F`` (scalar or callable of position)."""
    mesh, dofs = space.mesh, space.dofs
    edges = mesh.edges_tagged(GAMMA3)
    if not len(edges):
        raise ValueError("mesh has no gamma3 edges")
    nodes = np.unique(edges)
    lengths = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, edges[:, 0], 0.5 * lengths)
    np.add.at(w, edges[:, 1], 0.5 * lengths)
    weights = w[nodes]
    if callable(yield_limit):
        F = np.asarray(yield_limit(mesh.nodes[nodes]), dtype=float)
    else:
        F = np.full(len(nodes), float(yield_limit))
    nd = dofs.node_dofs[nodes]
    if np.any(nd < 0):
        raise ValueError("gamma3 touches the clamped boundary")
    # nu = (0, -1): v_nu = -v_y, tangent is x
    return ContactData(nodes, weights, F, nd[:, 1].copy(), -np.ones(len(nodes)), nd[:, 0].copy())


# --------------------------------------------------------------------------
# stresses

def memory_stress_mandel(space: FESpace, history) -> np.ndarray:
    """Element memory stress ``k sum_{j<=i} B(t_i - t_j) eps(u_j)`` in Mandel form."""
    m = space.n_triangles
    if history is None or history.step_index == 0:
        return np.zeros((m, 3))
    kernel = history.kernel
    if kernel.is_constant:
        return space.strains_mandel(history.weighted_sum)
    n = history.step_index
    out = np.zeros((m, 3))
    for j, uj in enumerate(history.prefix, start=1):
        D = kernel.tensor((n - j) * history.dt)
        out += history.dt * space.strains_mandel(uj) @ D.T
    return out


def reconstruct_stress_field(u: np.ndarray, history, space: FESpace, material: MaterialModel,
                             step: int | None = None) -> np.ndarray:
    """Per-triangle stress ``(m, 2, 2)`` from the displacement and its history.

    ``history`` must already contain ``u`` as its latest entry (or be empty
    for a memoryless evaluation).
    """
    if step is not None and history is not None and history.step_index != step:
        raise HistoryMismatch(f"history is at step {history.step_index}, trajectory at {step}")
    elastic = space.strains_mandel(u) @ material.elastic_matrix().T
    return from_mandel(elastic + memory_stress_mandel(space, history))
