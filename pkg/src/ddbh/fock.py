"""Truncated single-site bosonic operators and chain embedding.

Site-ordering convention (used by every module in this package): site 0 is
the LEFTMOST Kronecker factor.  A Fock configuration (k_0, ..., k_{n-1})
therefore maps to the full-chain basis index

    sum_l k_l * d**(n_sites - 1 - l).

All operators returned here have purely real entries, so complex
conjugation acts trivially on them.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LocalOps:
    """Truncated Fock-space operators for one site (occupations 0..dim-1)."""

    dim: int
    annihilate: np.ndarray
    create: np.ndarray
    number: np.ndarray
    identity: np.ndarray


def local_ops(dim):
    """Build the truncated annihilation/creation/number/identity matrices.

    annihilate[j-1, j] = sqrt(j); create is its transpose; number is
    diag(0, 1, ..., dim-1).
    """
    if dim < 2:
        raise ValueError(f"local dimension must be >= 2, got {dim}")
    b = np.zeros((dim, dim))
    for j in range(1, dim):
        b[j - 1, j] = np.sqrt(j)
    bdag = b.T.copy()
    n = bdag @ b
    return LocalOps(dim=dim, annihilate=b, create=bdag, number=n,
                    identity=np.eye(dim))


def embed(op, site, n_sites, dim):
    """Embed a dim x dim operator at `site` into the full-chain space.

    Returns I (x) ... (x) op (x) ... (x) I with `op` in the slot for `site`
    and site 0 the leftmost factor.
    """
    if not 0 <= site < n_sites:
        raise IndexError(f"site {site} out of range for {n_sites} sites")
    op = np.asarray(op)
    if op.shape != (dim, dim):
        raise ValueError(f"operator shape {op.shape} != ({dim}, {dim})")
    out = np.eye(1)
    for l in range(n_sites):
        out = np.kron(out, op if l == site else np.eye(dim))
    return out


def embed_two_site(op2, left_site, n_sites, dim):
    """Embed a two-site (dim^2 x dim^2) operator on (left_site, left_site+1)."""
    if not 0 <= left_site < n_sites - 1:
        raise IndexError(f"bond {left_site} out of range for {n_sites} sites")
    op2 = np.asarray(op2)
    d2 = dim * dim
    if op2.shape != (d2, d2):
        raise ValueError(f"operator shape {op2.shape} != ({d2}, {d2})")
    out = np.eye(1)
    l = 0
    while l < n_sites:
        if l == left_site:
            out = np.kron(out, op2)
            l += 2
        else:
            out = np.kron(out, np.eye(dim))
            l += 1
    return out


def basis_occupations(n_sites, dim):
    """Occupation numbers per site for each full-chain basis index.

    Returns an integer array of shape (dim**n_sites, n_sites) consistent
    with the embedding convention above.
    """
    idx = np.arange(dim ** n_sites)
    occ = np.empty((idx.size, n_sites), dtype=int)
    for l in range(n_sites - 1, -1, -1):
        occ[:, l] = idx % dim
        idx = idx // dim
    return occ
