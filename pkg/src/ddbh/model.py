"""Physical parameters of the driven-dissipative Bose-Hubbard chain.

Holds per-site detunings, bond hoppings, on-site interactions, a homogeneous
real drive amplitude and the local loss rate (all energies in units of the
loss rate, which defaults to 1).  Builds the rotating-frame Hamiltonian

    H = sum_l D_l n_l - sum_l J_l (b_l^+ b_{l+1} + b_l b_{l+1}^+)
        + sum_l (U_l / 2) n_l (n_l - 1) + W sum_l (b_l^+ + b_l)

and implements the sign-flip transformations of the parameter set.
Boundaries are open; the drive is real, so H is real-symmetric.
"""

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from .fock import local_ops, embed, embed_two_site

#: Hard cap on the full Hilbert-space dimension for dense-operator assembly.
#: D^2 <= 10^6 for the exact backend; larger chains must use the MPDO backend.
DENSE_DIM_CAP = 1000


class SizeCapError(ValueError):
    """Requested Hilbert space exceeds the configured dense-backend cap."""


class FlipMode(enum.Enum):
    """Which parameter signs get negated by apply_flip."""

    #: H -> -H: negates detuning, hopping, interaction AND drive.
    FULL_NEGATION = "full-negation"
    #: Negates detuning, hopping, interaction; drive kept fixed.  Leaves all
    #: boson-number statistics of the steady state invariant.
    NUMBER_CONSERVING = "number-conserving"
    #: Negates detuning and interaction only; hopping kept fixed.  Not a
    #: number-conserving transformation.
    PARTIAL_U_DELTA = "partial-u-delta"


@dataclass(frozen=True)
class ModelParams:
    """Chain parameters.  All energies in units of the dissipation rate."""

    n_sites: int
    detuning: tuple        # length n_sites
    hopping: tuple         # length n_sites - 1
    interaction: tuple     # length n_sites
    drive: float = 0.0
    dissipation: float = 1.0
    local_dim: int = 5

    def __post_init__(self):
        object.__setattr__(self, "detuning", tuple(float(x) for x in self.detuning))
        object.__setattr__(self, "hopping", tuple(float(x) for x in self.hopping))
        object.__setattr__(self, "interaction",
                           tuple(float(x) for x in self.interaction))
        if self.n_sites < 1:
            raise ValueError("n_sites must be >= 1")
        if len(self.detuning) != self.n_sites:
            raise ValueError("detuning must have one entry per site")
        if len(self.hopping) != self.n_sites - 1:
            raise ValueError("hopping must have one entry per bond")
        if len(self.interaction) != self.n_sites:
            raise ValueError("interaction must have one entry per site")
        if not self.dissipation > 0:
            raise ValueError("dissipation rate must be positive")
        if self.local_dim < 2:
            raise ValueError("local_dim must be >= 2")

    @property
    def dim(self):
        """Full-chain Hilbert-space dimension d**n_sites."""
        return self.local_dim ** self.n_sites

    def with_drive(self, omega):
        return dataclasses.replace(self, drive=float(omega))

    def to_dict(self):
        return {
            "n_sites": self.n_sites,
            "detuning": list(self.detuning),
            "hopping": list(self.hopping),
            "interaction": list(self.interaction),
            "drive": self.drive,
            "dissipation": self.dissipation,
            "local_dim": self.local_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(n_sites=int(d["n_sites"]),
                   detuning=tuple(d["detuning"]),
                   hopping=tuple(d["hopping"]),
                   interaction=tuple(d["interaction"]),
                   drive=float(d.get("drive", 0.0)),
                   dissipation=float(d.get("dissipation", 1.0)),
                   local_dim=int(d.get("local_dim", 5)))


def apply_flip(params, mode):
    """Negate the mode-designated parameter signs.  Involution for every mode."""
    mode = FlipMode(mode)
    neg = lambda xs: tuple(-x for x in xs)
    kw = {"detuning": neg(params.detuning),
          "interaction": neg(params.interaction)}
    if mode in (FlipMode.FULL_NEGATION, FlipMode.NUMBER_CONSERVING):
        kw["hopping"] = neg(params.hopping)
    if mode is FlipMode.FULL_NEGATION:
        kw["drive"] = -params.drive
    return dataclasses.replace(params, **kw)


def build_hamiltonian(params, dim_cap=DENSE_DIM_CAP):
    """Assemble the dense rotating-frame Hamiltonian.  Real-symmetric."""
    d = params.local_dim
    n = params.n_sites
    if params.dim > dim_cap:
        raise SizeCapError(
            f"dense Hamiltonian dimension {params.dim} exceeds cap {dim_cap}")
    ops = local_ops(d)
    b, bdag, num = ops.annihilate, ops.create, ops.number
    H = np.zeros((params.dim, params.dim))
    for l in range(n):
        h_site = (params.detuning[l] * num
                  + 0.5 * params.interaction[l] * (num @ (num - np.eye(d)))
                  + params.drive * (bdag + b))
        H += embed(h_site, l, n, d)
    for l in range(n - 1):
        hop = np.kron(bdag, b) + np.kron(b, bdag)
        H -= params.hopping[l] * embed_two_site(hop, l, n, d)
    return H


# ---------------------------------------------------------------------------
# Built-in trimer experiment presets (uniform and disordered, each with the
# number-conserving "case 1" sign pairing and the hopping-fixed "case 2"
# pairing).  gamma = 1 throughout; the drive amplitude is left at 0 for the
# sweep harness to set.
# ---------------------------------------------------------------------------

PRESET_NAMES = ("uniform-case1", "uniform-case2",
                "disordered-case1", "disordered-case2")

#: FlipMode that maps the upper sign choice of each preset to the lower one.
PRESET_FLIP_MODE = {
    "uniform-case1": FlipMode.NUMBER_CONSERVING,
    "uniform-case2": FlipMode.PARTIAL_U_DELTA,
    "disordered-case1": FlipMode.NUMBER_CONSERVING,
    "disordered-case2": FlipMode.PARTIAL_U_DELTA,
}


def table1_preset(which, sign="upper", local_dim=5):
    """Return a built-in trimer parameter set.

    `which` is one of PRESET_NAMES; `sign` is "upper" or "lower" and selects
    between the paired sign choices of the preset.
    """
    if which not in PRESET_NAMES:
        raise ValueError(f"unknown preset {which!r}; choose from {PRESET_NAMES}")
    if sign not in ("upper", "lower"):
        raise ValueError(f"sign must be 'upper' or 'lower', got {sign!r}")
    s = 1.0 if sign == "upper" else -1.0
    if which == "uniform-case1":
        hopping = (s * 1.0, s * 1.0)
        interaction = (s * 10.0,) * 3
        detuning = (s * 1.0,) * 3
    elif which == "uniform-case2":
        hopping = (1.0, 1.0)
        interaction = (s * 10.0,) * 3
        detuning = (s * 1.0,) * 3
    elif which == "disordered-case1":
        hopping = (s * 1.0, -s * 3.0)
        interaction = (s * 8.0, 0.0, -s * 10.0)
        detuning = (0.0, -s * 10.0, s * 1.0)
    else:  # disordered-case2
        hopping = (1.0, -3.0)
        interaction = (s * 8.0, 0.0, -s * 10.0)
        detuning = (0.0, -s * 10.0, s * 1.0)
    return ModelParams(n_sites=3, detuning=detuning, hopping=hopping,
                       interaction=interaction, drive=0.0, dissipation=1.0,
                       local_dim=local_dim)
