"""Steady-state observables: number statistics, correlators, diagnostics.

All functions accept either a dense DensityMatrix (or bare D x D array) or
an MpdoState; tensor-network states are evaluated by direct contraction so
the same quantities can be emitted from both backends for cross-validation.
"""

from dataclasses import dataclass

import numpy as np

from .exact import DensityMatrix
from .fock import basis_occupations, local_ops
from .mpdo import MpdoState, mpdo_expectation


@dataclass
class NumberDistribution:
    site: int
    probabilities: np.ndarray  # P(n = k), k = 0..d-1

    def clipped(self):
        """Probabilities with negative roundoff clipped to 0 (for reports)."""
        return np.clip(self.probabilities, 0.0, None)

    @property
    def mean(self):
        return float(np.sum(np.arange(len(self.probabilities))
                            * self.probabilities))


@dataclass
class ObservableRow:
    """One (drive value, state) record as emitted by the harness."""

    omega: float
    mean_n: list                 # per-site <n_l>
    distributions: list          # per-site NumberDistribution
    correlator: float            # <n_1 n_2 ... n_L> over all sites
    backend: str
    residual: float
    sweep_direction: str = "ascending"
    sign_choice: str = "upper"


def _shape_info(state, local_dim=None):
    if isinstance(state, MpdoState):
        return state.n_sites, state.local_dim
    data = state.data if isinstance(state, DensityMatrix) else np.asarray(state)
    D = data.shape[0]
    if local_dim is None:
        raise ValueError("local_dim required for dense input")
    n = int(round(np.log(D) / np.log(local_dim)))
    if local_dim ** n != D:
        raise ValueError(f"matrix dim {D} is not {local_dim}^n")
    return n, local_dim


def _dense_data(state):
    return state.data if isinstance(state, DensityMatrix) else np.asarray(state)


def number_distribution(state, site, local_dim=None):
    """P(n_site = k) in the Fock basis, k = 0..d-1."""
    n_sites, d = _shape_info(state, local_dim)
    if not 0 <= site < n_sites:
        raise IndexError(f"site {site} out of range")
    if isinstance(state, MpdoState):
        probs = np.empty(d)
        for k in range(d):
            proj = np.zeros((d, d))
            proj[k, k] = 1.0
            probs[k] = mpdo_expectation(state, [(site, proj)]).real
    else:
        rho = _dense_data(state)
        diag = np.diag(rho).real / np.trace(rho).real
        occ = basis_occupations(n_sites, d)
        probs = np.array([diag[occ[:, site] == k].sum() for k in range(d)])
    return NumberDistribution(site=site, probabilities=probs)


def mean_occupation(state, site, local_dim=None):
    """<n_site>."""
    n_sites, d = _shape_info(state, local_dim)
    if isinstance(state, MpdoState):
        return mpdo_expectation(state, [(site, local_ops(d).number)]).real
    return number_distribution(state, site, local_dim=d).mean


def correlator(state, sites, local_dim=None):
    """<prod_s n_s> over distinct sites (real: diagonal Hermitian operator)."""
    n_sites, d = _shape_info(state, local_dim)
    sites = list(sites)
    if len(set(sites)) != len(sites):
        raise ValueError("correlator sites must be distinct")
    for s in sites:
        if not 0 <= s < n_sites:
            raise IndexError(f"site {s} out of range")
    if isinstance(state, MpdoState):
        num = local_ops(d).number
        return mpdo_expectation(state, [(s, num) for s in sites]).real
    rho = _dense_data(state)
    diag = np.diag(rho).real / np.trace(rho).real
    occ = basis_occupations(n_sites, d)
    weight = np.ones(diag.size)
    for s in sites:
        weight = weight * occ[:, s]
    return float(np.sum(diag * weight))


def conjugate_state(rho):
    """Entrywise complex conjugate in the Fock basis (a valid state again)."""
    data = _dense_data(rho)
    out = data.conj()
    return DensityMatrix(data=out) if isinstance(rho, DensityMatrix) else out


def trace_distance(rho1, rho2):
    """(1/2) ||rho1 - rho2||_1."""
    a, b = _dense_data(rho1), _dense_data(rho2)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = 0.5 * ((a - b) + (a - b).conj().T)  # Hermitian part
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def diagnostics(rho):
    """Validity record: trace, hermiticity defect, min eigenvalue, purity."""
    data = _dense_data(rho)
    herm = float(np.max(np.abs(data - data.conj().T)))
    sym = 0.5 * (data + data.conj().T)
    w = np.linalg.eigvalsh(sym)
    return {
        "trace": complex(np.trace(data)),
        "hermiticity_defect": herm,
        "min_eigenvalue": float(w.min()),
        "purity": float(np.trace(data @ data).real),
    }


def observable_row(state, omega, backend, residual, local_dim=None,
                   sweep_direction="ascending", sign_choice="upper"):
    """Assemble the full per-state record (all sites)."""
    n_sites, d = _shape_info(state, local_dim)
    dists = [number_distribution(state, s, local_dim=d)
             for s in range(n_sites)]
    return ObservableRow(
        omega=float(omega),
        mean_n=[dist.mean for dist in dists],
        distributions=dists,
        correlator=correlator(state, range(n_sites), local_dim=d),
        backend=backend,
        residual=float(residual),
        sweep_direction=sweep_direction,
        sign_choice=sign_choice,
    )
