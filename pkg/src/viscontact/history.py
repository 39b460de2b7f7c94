"""Discrete memory operators on a uniform time grid ``t_n = n k``.

The memory integral is approximated by the right-rectangle rule

    int_0^{t_n} B(t_n - s) w(s) ds  ~  k * sum_{j=1}^{n} B(t_n - t_j) w_j,

so the current step contributes ``k B(0) w_n``.  For a constant kernel the
sum obeys a one-term recursion; any other kernel goes through the full
O(n^2) sum, which also serves as the reference for the recursion.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class NonConstantKernel(ValueError):
    pass


class SingularStep(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ConstantKernel:
    """``B(t) w = b w`` for all t (units Pa/s)."""

    b: float

    is_constant = True

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("relaxation parameter b must be nonnegative")

    def scalar(self, lag: float) -> float:
        return self.b

    def tensor(self, lag: float) -> np.ndarray:
        return self.b * np.eye(3)


@dataclass(frozen=True)
class SampledKernel:
    """General kernel evaluated only at grid lags ``0, k, 2k, ...``.

    ``fn(lag)`` returns either a scalar (isotropic ``b(t) I``) or a 3x3
    Mandel matrix.
    """

    fn: Callable[[float], object]

    is_constant = False

    def _value(self, lag):
        return np.asarray(self.fn(lag), dtype=float)

    def scalar(self, lag: float) -> float:
        v = self._value(lag)
        if v.ndim:
            raise TypeError("tensor-valued kernel has no scalar value")
        return float(v)

    @property
    def isotropic(self) -> bool:
        return self._value(0.0).ndim == 0

    def tensor(self, lag: float) -> np.ndarray:
        v = self._value(lag)
        return float(v) * np.eye(3) if v.ndim == 0 else v


def lag_operator(kernel, lag: float, gram):
    """DOF-space matrix of ``(u, v) -> (B(lag) eps(u), eps(v))_Q``.

    ``gram`` is the strain Gram matrix (enough for isotropic kernels) or an
    :class:`~viscontact.fem.FESpace` (needed for tensor-valued kernels).
    """
    from .fem import FESpace

    if kernel.is_constant or getattr(kernel, "isotropic", False):
        G = gram.gram if isinstance(gram, FESpace) else gram
        return kernel.scalar(lag) * G
    if not isinstance(gram, FESpace):
        raise TypeError("tensor-valued kernels need the FESpace to assemble lag operators")
    return gram.assemble(kernel.tensor(lag))


@dataclass(frozen=True, eq=False)
class HistoryState:
    """Memory accumulated after ``step_index`` steps.

    ``accumulated`` is the DOF-space vector of ``((S u)_i, .)_V``.  For a
    constant kernel ``weighted_sum = k b sum_j u_j`` (so ``accumulated = G @
    weighted_sum``); for general kernels the whole prefix is kept.
    """

    kernel: object
    dt_k: float
    step_index: int = 0
    accumulated: np.ndarray | None = None
    weighted_sum: np.ndarray | None = None
    prefix: tuple = field(default=())

    @property
    def dt(self) -> float:
        return self.dt_k

    @classmethod
    def empty(cls, kernel, dt: float, n_dofs: int) -> "HistoryState":
        z = np.zeros(n_dofs)
        return cls(kernel, dt, 0, z, z.copy(), ())


def convolve_full(prefix, kernel, k: float, gram, *, at_step: int | None = None) -> np.ndarray:
    """Riesz vector of ``v -> (k sum_{j=1}^{n} B(t_n - t_j) eps(u_j), eps(v))_Q``.

    ``n = at_step`` defaults to ``len(prefix)``; with ``at_step =
    len(prefix) + 1`` this gives the known memory load of the next step
    (only the terms ``j <= n - 1``).
    """
    prefix = [np.asarray(u, dtype=float) for u in prefix]
    if not prefix:
        raise ValueError("need at least one entry")
    n = len(prefix) if at_step is None else at_step
    if n < len(prefix):
        raise ValueError("at_step precedes the end of the prefix")
    ops: dict[int, object] = {}
    out = np.zeros_like(prefix[0])
    for j, uj in enumerate(prefix, start=1):
        m = n - j
        if m not in ops:
            ops[m] = lag_operator(kernel, m * k, gram)
        out += k * (ops[m] @ uj)
    return out


def history_update(state: HistoryState, u_i: np.ndarray, G) -> HistoryState:
    """Constant-kernel recursion ``(S u)_i = (S u)_{i-1} + k b G u_i``."""
    if not state.kernel.is_constant:
        raise NonConstantKernel("the recursion only holds for constant kernels; use convolve_full")
    kb = state.dt_k * state.kernel.b
    ws = state.weighted_sum + kb * np.asarray(u_i, dtype=float)
    acc = state.accumulated + kb * (G @ np.asarray(u_i, dtype=float))
    return replace(state, step_index=state.step_index + 1, accumulated=acc, weighted_sum=ws,
                   prefix=state.prefix + (np.asarray(u_i, dtype=float).copy(),))


def history_append(state: HistoryState, u_i: np.ndarray, gram) -> HistoryState:
    """Advance any kernel: recursion when constant, full convolution otherwise."""
    if state.kernel.is_constant:
        return history_update(state, u_i, gram.gram if hasattr(gram, "gram") else gram)
    prefix = state.prefix + (np.asarray(u_i, dtype=float).copy(),)
    acc = convolve_full(prefix, state.kernel, state.dt_k, gram)
    return replace(state, step_index=state.step_index + 1, accumulated=acc, prefix=prefix)


def memory_load(state: HistoryState, gram) -> np.ndarray:
    """Known memory term entering step ``i = step_index + 1`` (terms ``j <= i - 1``)."""
    if state.step_index == 0:
        return np.zeros_like(state.accumulated)
    if state.kernel.is_constant:
        return state.accumulated
    return convolve_full(state.prefix, state.kernel, state.dt_k, gram, at_step=state.step_index + 1)


# --------------------------------------------------------------------------
# abstract Volterra equations  (A + S) u = g  in R^d

def _lag_value(kernel, lag, d):
    if kernel is None:
        return 0.0
    v = np.asarray(_kernel_raw(kernel, lag), dtype=float)
    if v.ndim == 0:
        return float(v)
    if v.shape != (d, d):
        raise ValueError(f"kernel value has shape {v.shape}, system has dimension {d}")
    return v


def _kernel_raw(kernel, lag):
    if isinstance(kernel, ConstantKernel):
        return kernel.b
    if isinstance(kernel, SampledKernel):
        return kernel._value(lag)
    if callable(kernel):
        return kernel(lag)
    return kernel  # plain number


def _as_operator(A, d=None):
    if np.isscalar(A):
        return sp.identity(d or 1, format="csc") * float(A)
    return sp.csc_matrix(A) if sp.issparse(A) else sp.csc_matrix(np.atleast_2d(np.asarray(A, dtype=float)))


def _times(B, x):
    return B * x if np.isscalar(B) else B @ x


def _as_series(x):
    """``(N,)``, ``(N, d)`` or ``(N, d, r)`` -> ``(N, d, r)`` plus the original rank."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[:, None, None], 1
    if x.ndim == 2:
        return x[:, :, None], 2
    if x.ndim == 3:
        return x, 3
    raise ValueError("time series must have 1, 2 or 3 axes")


def _restore(x, rank):
    return x[:, 0, 0] if rank == 1 else (x[:, :, 0] if rank == 2 else x)


def volterra_apply(A_mat, kernel, u, k: float) -> np.ndarray:
    """Forward operator ``g_n = A u_n + k sum_{j<=n} B(t_n - t_j) u_j``.

    ``u`` is ``(N,)``, ``(N, d)`` or ``(N, d, r)``; the last form applies the
    operator to ``r`` independent series at once.
    """
    u, rank = _as_series(u)
    N, d, _ = u.shape
    A = _as_operator(A_mat, d)
    g = np.array([A @ u[n] for n in range(N)])
    if kernel is not None:
        lags = [_lag_value(kernel, m * k, d) for m in range(N)]
        for n in range(N):
            for j in range(n + 1):
                g[n] += k * _times(lags[n - j], u[j])
    return _restore(g, rank)


def volterra_resolve(A_mat, kernel, g, k: float) -> np.ndarray:
    """Solve ``(A + S) u = g`` forward in time (discrete inverse ``A^-1 + R``).

    Step ``n`` solves ``(A + k B(0)) u_n = g_n - k sum_{j<n} B(t_n - t_j) u_j``.
    Shapes follow :func:`volterra_apply`.
    """
    g, rank = _as_series(g)
    N, d, r = g.shape
    if N < 1:
        raise ValueError("need at least one time level")
    A = _as_operator(A_mat, d)
    if A.shape != (d, d):
        raise ValueError("operator and data dimensions differ")
    lags = [_lag_value(kernel, m * k, d) for m in range(N)]
    B0 = lags[0]
    step = A + (k * B0 * sp.identity(d, format="csc") if np.isscalar(B0) else sp.csc_matrix(k * B0))
    try:
        lu = spla.splu(sp.csc_matrix(step))
    except RuntimeError as exc:
        raise SingularStep(str(exc)) from exc
    u = np.zeros((N, d, r))
    const = isinstance(kernel, ConstantKernel) or np.isscalar(kernel)
    running = np.zeros((d, r))
    for n in range(N):
        if const:
            rhs = g[n] - k * _times(B0, running)
        else:
            rhs = g[n].copy()
            for j in range(n):
                rhs -= k * _times(lags[n - j], u[j])
        u[n] = lu.solve(rhs)
        if not np.all(np.isfinite(u[n])):
            raise SingularStep(f"step {n + 1} produced non-finite values")
        running += u[n]
    return _restore(u, rank)
