"""Steady states of driven-dissipative Bose-Hubbard chains.

Exact vectorized-Liouvillian and MPDO tensor-network backends for the
Lindblad master equation of a coherently driven, lossy Bose-Hubbard chain,
plus a harness for sign-flip symmetry experiments on trimer presets.
"""

__version__ = "0.1.0"

from .fock import LocalOps, local_ops, embed
from .model import (ModelParams, FlipMode, apply_flip, build_hamiltonian,
                    table1_preset, PRESET_NAMES, SizeCapError)
from .liouville import (SuperOp, Stacking, vectorize, devectorize,
                        build_superop, apply, residual, residual_norm)
from .exact import (DensityMatrix, NessSolveReport, steady_state, evolve,
                    steady_state_by_evolution, vacuum_state)
from .mpdo import (MpdoState, ConvergenceReport, random_mpdo, trotter_step,
                   converge_to_ness, sweep_drive, mpdo_expectation, to_dense,
                   mpdo_from_dense)
from .observables import (NumberDistribution, ObservableRow,
                          number_distribution, mean_occupation, correlator,
                          conjugate_state, trace_distance, diagnostics,
                          observable_row)
