"""Exact (dense/sparse, non-tensor-network) steady states and time evolution.

Serves as the oracle for the MPDO backend and for the sign-flip symmetry
checks.  The steady state is obtained from the numerical kernel of the
vectorized Lindblad generator: the trace condition replaces one row of the
(singular) sparse matrix and the resulting linear system is solved directly.
"""

import enum
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .liouville import vectorize, devectorize, residual_norm


class SolverFailureError(RuntimeError):
    """Steady-state solve did not reach the requested residual."""


class InstabilityError(RuntimeError):
    """Time integration became unstable (trace drift too large per step)."""


class NessMethod(enum.Enum):
    NULL_SPACE = "null-space"
    TIME_EVOLUTION = "time-evolution"


@dataclass
class DensityMatrix:
    """Dense density matrix on the full chain Hilbert space."""

    data: np.ndarray

    @property
    def dim(self):
        return self.data.shape[0]

    def validate(self, herm_tol=1e-10, trace_tol=1e-10, eig_tol=1e-8):
        """Raise if Hermiticity, unit trace or positivity are violated."""
        herm = np.max(np.abs(self.data - self.data.conj().T))
        if herm > herm_tol:
            raise ValueError(f"hermiticity defect {herm:.3e} > {herm_tol}")
        tr = np.trace(self.data)
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"trace {tr} deviates from 1 by more than {trace_tol}")
        w = np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))
        if w.min() < -eig_tol:
            raise ValueError(f"minimum eigenvalue {w.min():.3e} < -{eig_tol}")
        return self


@dataclass
class NessSolveReport:
    rho: DensityMatrix
    residual: float
    nullspace_dim: int
    method: NessMethod
    steps: int
    wall_time: float
    unique: bool = field(init=False)

    def __post_init__(self):
        self.unique = self.nullspace_dim == 1


def _as_density_matrix(x):
    if isinstance(x, DensityMatrix):
        return x
    return DensityMatrix(data=np.asarray(x, dtype=complex))


def _hermitize_normalize(rho):
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def _trace_row(D, stacking):
    """Row vector t with t . vec(rho) = trace(rho)."""
    t = np.zeros(D * D)
    # diagonal entry (i, i) sits at index i + D*i under either convention
    t[np.arange(D) * (D + 1)] = 1.0
    return t


def _row_replaced(superop):
    """L with the first row swapped for the trace condition, as CSC."""
    D = superop.hilbert_dim
    M = superop.matrix.tolil(copy=True)
    M[0, :] = _trace_row(D, superop.stacking)
    return M.tocsc()


def make_preconditioner(superop, drop_tol=1e-3, fill_factor=12):
    """Incomplete-LU preconditioner for the trace-constrained kernel solve.

    Expensive to build but reusable across nearby parameter points (e.g. a
    whole drive sweep of one parameter family), where it cuts each solve to
    a fraction of a second.
    """
    ilu = spla.spilu(_row_replaced(superop), drop_tol=drop_tol,
                     fill_factor=fill_factor)
    return spla.LinearOperator(superop.matrix.shape, ilu.solve)


def _matrix_norm_estimate(L):
    # exact sparse 1-norm (max column abs sum); deterministic and cheap
    return float(np.abs(L).sum(axis=0).max())


def nullspace_dimension(superop, k=3, kernel_rel_threshold=1e-10, shift=1e-2,
                        preconditioner=None):
    """Numerical kernel dimension of the Lindblad generator.

    Small systems use a dense SVD; large ones use shift-invert Arnoldi and
    count eigenvalues below the kernel threshold (relative to a 1-norm
    estimate of the matrix).  The shift sits just right of the spectrum
    (Re <= 0 for a Lindblad generator), well separated from everything but
    the stationary eigenvalues, so the shifted inner solves stay well
    conditioned; they run LGMRES with the same incomplete-LU preconditioner
    used for the kernel solve.
    """
    L = superop.matrix
    thresh = max(kernel_rel_threshold * _matrix_norm_estimate(L),
                 1e-4 * shift)
    if L.shape[0] <= 1500:
        sv = np.linalg.svd(L.toarray(), compute_uv=False)
        return int(np.sum(sv < thresh))
    k = min(k, L.shape[0] - 2)
    if preconditioner is None:
        preconditioner = make_preconditioner(superop)
    shifted = (L - shift * sp.identity(L.shape[0], format="csr")).tocsr()

    def op_inv(b):
        x, info = spla.lgmres(shifted, b, M=preconditioner, rtol=1e-10,
                              atol=0.0, maxiter=300)
        if info != 0:
            raise SolverFailureError("shift-invert inner solve stalled")
        return x

    opinv = spla.LinearOperator(L.shape, op_inv, dtype=complex)
    try:
        vals = spla.eigs(L, k=k, sigma=shift, which="LM", OPinv=opinv,
                         return_eigenvectors=False)
    except spla.ArpackNoConvergence as err:
        vals = err.eigenvalues
    return int(np.sum(np.abs(vals) < thresh))


def steady_state(superop, tol=1e-10, compute_kernel_dim=True,
                 preconditioner=None):
    """Solve L vec(rho) = 0 with trace(rho) = 1.

    Trace-constrained sparse solve (LGMRES over the row-replaced system,
    incomplete-LU preconditioned).  The relative residual
    ||L v|| / (||L||_1 ||v||) must come out below `tol`, else a
    SolverFailureError is raised.  The kernel dimension is reported so the
    caller can detect non-unique steady states (a warning condition, not a
    failure).
    """
    t0 = time.perf_counter()
    L = superop.matrix.tocsr()
    M = _row_replaced(superop)
    rhs = np.zeros(superop.dim, dtype=complex)
    rhs[0] = 1.0
    if preconditioner is None:
        preconditioner = make_preconditioner(superop)
    with warnings.catch_warnings():
        # lgmres emits a harmless 0/0 warning when it converges in one step
        warnings.simplefilter("ignore", RuntimeWarning)
        v, info = spla.lgmres(M, rhs, M=preconditioner, rtol=1e-13, atol=0.0,
                              maxiter=500)
    if info != 0:
        # retry with a stronger factorization before giving up
        preconditioner = make_preconditioner(superop, drop_tol=1e-5,
                                             fill_factor=30)
        v, info = spla.lgmres(M, rhs, M=preconditioner, rtol=1e-13, atol=0.0,
                              maxiter=500)
        if info != 0:
            raise SolverFailureError(f"kernel solve stalled (lgmres info={info})")
    rel_res = np.linalg.norm(L @ v) / (_matrix_norm_estimate(L)
                                       * np.linalg.norm(v))
    if not np.isfinite(rel_res) or rel_res > tol:
        raise SolverFailureError(
            f"steady-state relative residual {rel_res:.3e} exceeds tol {tol:.1e}")
    rho = _hermitize_normalize(devectorize(v, superop.stacking))
    ndim = (nullspace_dimension(superop, preconditioner=preconditioner)
            if compute_kernel_dim else 1)
    return NessSolveReport(rho=DensityMatrix(data=rho), residual=float(rel_res),
                           nullspace_dim=ndim, method=NessMethod.NULL_SPACE,
                           steps=1, wall_time=time.perf_counter() - t0)


def evolve(rho0, superop, t_final, dt, max_trace_drift=1e-6):
    """Integrate the master equation with fixed-step classical RK4.

    Hermiticity is restored and the trace renormalized after every step;
    per-step trace drift beyond `max_trace_drift` aborts with an
    instability error (reduce dt).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rho = _as_density_matrix(rho0).data
    v = vectorize(rho, superop.stacking).data
    L = superop.matrix
    n_steps = int(round(t_final / dt))
    for _ in range(n_steps):
        k1 = L @ v
        k2 = L @ (v + 0.5 * dt * k1)
        k3 = L @ (v + 0.5 * dt * k2)
        k4 = L @ (v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = devectorize(v, superop.stacking)
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho).real
        if abs(tr - 1.0) > max_trace_drift:
            raise InstabilityError(
                f"trace drifted by {abs(tr - 1.0):.3e} in one step; reduce dt")
        rho = rho / tr
        v = vectorize(rho, superop.stacking).data
    return DensityMatrix(data=np.asarray(rho, dtype=complex))


def steady_state_by_evolution(rho0, superop, dt=1e-2, residual_target=1e-8,
                              check_every=200, max_steps=2_000_000):
    """Evolve until the normalized residual drops below `residual_target`.

    Independent oracle route for cross-checking the direct null-space solve.
    """
    t0 = time.perf_counter()
    rho = _as_density_matrix(rho0)
    steps = 0
    res = residual_norm(superop, rho.data)
    while res > residual_target:
        if steps >= max_steps:
            raise SolverFailureError(
                f"evolution stalled at residual {res:.3e} after {steps} steps")
        rho = evolve(rho, superop, check_every * dt, dt)
        steps += check_every
        res = residual_norm(superop, rho.data)
    return NessSolveReport(rho=rho, residual=float(res), nullspace_dim=1,
                           method=NessMethod.TIME_EVOLUTION, steps=steps,
                           wall_time=time.perf_counter() - t0)


def vacuum_state(dim):
    """|0...0><0...0| on a dimension-`dim` space."""
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    return DensityMatrix(data=rho)
