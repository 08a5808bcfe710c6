"""Vectorization of density matrices and sparse Lindblad superoperator.

The equation of motion is

    drho/dt = -i [H, rho] + g sum_l (b_l rho b_l^+ - {b_l^+ b_l, rho} / 2)

with local loss operators b_l.  Under the column-stacking convention
(vec stacks matrix columns, v[i + D*j] = rho[i, j]) the matrix form is

    L = -i (I (x) H  -  H^T (x) I)
        + g sum_l [ b_l (x) b_l - I (x) (b_l^+ b_l) / 2 - (b_l^+ b_l)^T (x) I / 2 ]

(all local operators are real, so conjugation is trivial).  The stacking
convention is carried as a tag on both the superoperator and vectorized
states so a mismatch is an error rather than a silent transpose bug.
"""

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fock import local_ops, embed
from .model import build_hamiltonian, SizeCapError

#: Default cap on the superoperator dimension D^2 for the exact backend.
SUPEROP_DIM_CAP = 10 ** 6


class Stacking(enum.Enum):
    COLUMN = "column"
    ROW = "row"


class ConventionError(ValueError):
    """Stacking conventions of two objects do not match."""


class DegenerateStateError(ValueError):
    """State has (numerically) zero norm."""


@dataclass
class VectorizedState:
    data: np.ndarray
    stacking: Stacking = Stacking.COLUMN


@dataclass
class SuperOp:
    """Sparse matrix form of the Lindblad generator on vec(rho)."""

    dim: int               # D^2
    matrix: sp.csr_matrix
    stacking: Stacking
    n_sites: int
    local_dim: int

    @property
    def hilbert_dim(self):
        return self.local_dim ** self.n_sites


def vectorize(rho, stacking=Stacking.COLUMN):
    """Reshape a D x D matrix into a length-D^2 vector."""
    rho = np.asarray(rho)
    order = "F" if stacking is Stacking.COLUMN else "C"
    return VectorizedState(data=rho.reshape(-1, order=order).astype(complex),
                           stacking=stacking)


def devectorize(v, stacking=Stacking.COLUMN):
    """Inverse of vectorize.  Accepts a VectorizedState or a bare vector."""
    if isinstance(v, VectorizedState):
        if v.stacking is not stacking:
            raise ConventionError(
                f"state uses {v.stacking}, requested {stacking}")
        data = v.data
    else:
        data = np.asarray(v)
    D = int(round(np.sqrt(data.size)))
    if D * D != data.size:
        raise ValueError(f"vector length {data.size} is not a perfect square")
    order = "F" if stacking is Stacking.COLUMN else "C"
    return data.reshape((D, D), order=order)


def _left_mult(A, stacking):
    """Superoperator for rho -> A rho."""
    A = sp.csr_matrix(A)
    I = sp.identity(A.shape[0], format="csr")
    if stacking is Stacking.COLUMN:
        return sp.kron(I, A, format="csr")
    return sp.kron(A, I, format="csr")


def _right_mult(B, stacking):
    """Superoperator for rho -> rho B."""
    B = sp.csr_matrix(B)
    I = sp.identity(B.shape[0], format="csr")
    if stacking is Stacking.COLUMN:
        return sp.kron(B.T, I, format="csr")
    return sp.kron(I, B.T, format="csr")


def build_superop(params, stacking=Stacking.COLUMN, dim_cap=SUPEROP_DIM_CAP):
    """Assemble the sparse Lindblad generator for the given chain parameters."""
    D = params.dim
    if D * D > dim_cap:
        raise SizeCapError(
            f"superoperator dimension {D * D} exceeds cap {dim_cap}; "
            "use the MPDO backend for chains this large")
    H = build_hamiltonian(params)
    L = -1j * (_left_mult(H, stacking) - _right_mult(H, stacking))
    ops = local_ops(params.local_dim)
    g = params.dissipation
    for l in range(params.n_sites):
        b = embed(ops.annihilate, l, params.n_sites, params.local_dim)
        n = embed(ops.number, l, params.n_sites, params.local_dim)
        L = L + g * (_left_mult(b, stacking) @ _right_mult(b.T, stacking)
                     - 0.5 * _left_mult(n, stacking)
                     - 0.5 * _right_mult(n, stacking))
    return SuperOp(dim=D * D, matrix=sp.csr_matrix(L), stacking=stacking,
                   n_sites=params.n_sites, local_dim=params.local_dim)


def apply(superop, v):
    """Matrix-vector product L v."""
    if isinstance(v, VectorizedState):
        if v.stacking is not superop.stacking:
            raise ConventionError(
                f"state uses {v.stacking}, superop uses {superop.stacking}")
        data = v.data
    else:
        data = np.asarray(v)
    if data.shape != (superop.dim,):
        raise ValueError(f"vector shape {data.shape} != ({superop.dim},)")
    return VectorizedState(data=superop.matrix @ data,
                           stacking=superop.stacking)


def _as_vec(superop, rho_or_vec):
    if isinstance(rho_or_vec, VectorizedState):
        if rho_or_vec.stacking is not superop.stacking:
            raise ConventionError("stacking mismatch")
        return rho_or_vec.data
    arr = np.asarray(getattr(rho_or_vec, "data", rho_or_vec))
    if arr.ndim == 2:
        return vectorize(arr, superop.stacking).data
    return arr.astype(complex)


def residual(superop, rho):
    """Normalized vectorized expectation |<rho| L |rho>| / <rho|rho>.

    This is the convergence figure of merit used by the evolution solvers.
    """
    v = _as_vec(superop, rho)
    nrm2 = np.vdot(v, v).real
    if nrm2 <= 0 or not np.isfinite(nrm2):
        raise DegenerateStateError("state has zero norm")
    return abs(np.vdot(v, superop.matrix @ v)) / nrm2


def residual_norm(superop, rho):
    """Secondary diagnostic: ||L vec(rho)||_2 / ||vec(rho)||_2."""
    v = _as_vec(superop, rho)
    nrm = np.linalg.norm(v)
    if nrm <= 0 or not np.isfinite(nrm):
        raise DegenerateStateError("state has zero norm")
    return np.linalg.norm(superop.matrix @ v) / nrm
