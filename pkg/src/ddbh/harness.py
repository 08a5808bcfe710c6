"""Experiment orchestration: presets, drive sweeps, symmetry comparisons.

A run is described by an ExperimentConfig (JSON-serializable).  For each
sign choice (base parameters, and their flip when a flip mode is set) the
drive grid is swept in both directions on the requested backend(s); per-point
observables, direction/backend cross-checks and the sign-flip symmetry
comparison are collected and written out as a CSV plus a text summary.
Everything is deterministic given the config and seed.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__
from .exact import steady_state, make_preconditioner, SolverFailureError
from .liouville import build_superop
from .model import (ModelParams, FlipMode, apply_flip, table1_preset,
                    PRESET_NAMES, PRESET_FLIP_MODE)
from .mpdo import random_mpdo, sweep_drive, to_dense, DENSE_VEC_CAP
from .observables import observable_row, conjugate_state, trace_distance

#: Environment variable naming the default output directory.
OUTPUT_DIR_ENV = "DDBH_OUTDIR"


@dataclass
class MpdoSettings:
    chi: int = 15
    dt: float = 0.1
    residual_threshold: float = 1e-3
    sv_log_tol: float = 0.05
    check_interval: int = 100
    step_budget: int = 40000
    seed: int = 1234

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: type(getattr(cls(), k))(v) for k, v in d.items()})


@dataclass
class ExperimentConfig:
    preset: str = None                 # one of PRESET_NAMES, or None
    model: ModelParams = None          # explicit parameters (overrides preset)
    omega_grid: tuple = tuple(round(0.1 * k, 10) for k in range(1, 11))
    backend: str = "exact"             # "exact" | "mpdo" | "both"
    flip_mode: FlipMode = None         # None: single sign choice
    mpdo: MpdoSettings = field(default_factory=MpdoSettings)
    local_dim: int = 5
    exact_symmetry_tol: float = 1e-8
    mpdo_symmetry_tol: float = 1e-3
    exact_uniqueness_tol: float = 1e-8
    mpdo_uniqueness_tol: float = 1e-3
    exact_tol: float = 1e-10
    output_dir: str = None
    dump_states: bool = False

    def __post_init__(self):
        if self.model is None and self.preset is None:
            raise ValueError("config needs a preset name or explicit model")
        if self.preset is not None and self.preset not in PRESET_NAMES:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.backend not in ("exact", "mpdo", "both"):
            raise ValueError(f"unknown backend {self.backend!r}")
        grid = tuple(float(w) for w in self.omega_grid)
        if not grid:
            raise ValueError("omega_grid must be non-empty")
        diffs = np.diff(grid)
        if len(grid) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError("omega_grid must be strictly monotone")
        object.__setattr__(self, "omega_grid", grid)
        if self.flip_mode is not None:
            object.__setattr__(self, "flip_mode", FlipMode(self.flip_mode))

    def base_params(self):
        if self.model is not None:
            return self.model
        return table1_preset(self.preset, "upper", local_dim=self.local_dim)

    def resolved_flip_mode(self):
        if self.flip_mode is not None:
            return self.flip_mode
        if self.preset is not None:
            return PRESET_FLIP_MODE[self.preset]
        return None

    def to_dict(self):
        return {
            "preset": self.preset,
            "model": self.model.to_dict() if self.model is not None else None,
            "omega_grid": list(self.omega_grid),
            "backend": self.backend,
            "flip_mode": self.flip_mode.value if self.flip_mode else None,
            "mpdo": self.mpdo.to_dict(),
            "local_dim": self.local_dim,
            "exact_symmetry_tol": self.exact_symmetry_tol,
            "mpdo_symmetry_tol": self.mpdo_symmetry_tol,
            "exact_uniqueness_tol": self.exact_uniqueness_tol,
            "mpdo_uniqueness_tol": self.mpdo_uniqueness_tol,
            "exact_tol": self.exact_tol,
            "output_dir": self.output_dir,
            "dump_states": self.dump_states,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("model"):
            d["model"] = ModelParams.from_dict(d["model"])
        if d.get("flip_mode"):
            d["flip_mode"] = FlipMode(d["flip_mode"])
        if d.get("mpdo"):
            d["mpdo"] = MpdoSettings.from_dict(d["mpdo"])
        if d.get("omega_grid") is not None:
            d["omega_grid"] = tuple(d["omega_grid"])
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known and v is not None})


@dataclass
class SymmetryRow:
    backend: str
    omega: float
    max_abs_dp: float                    # max_{site,k} |P+ - P-|
    abs_dcorr: float                     # |<n1 n2 n3>+ - <n1 n2 n3>-|
    max_abs_dn: float                    # max_l |<n_l>+ - <n_l>-|
    td_plus_minus: float                 # trace_distance(rho+, rho-)
    td_plus_conj_minus: float            # trace_distance(rho+, conj(rho-))
    verdict: str                         # "invariant" | "non-invariant"


@dataclass
class SymmetryReport:
    flip_mode: str
    tolerances: dict
    rows: list


@dataclass
class RunResult:
    rows: list                           # ObservableRow records
    symmetry: SymmetryReport
    uniqueness: list                     # per-check dict records
    backend_crosschecks: list            # exact-vs-mpdo dict records
    flags: list                          # human-readable problem strings
    nullspace_dims: dict                 # sign -> kernel dimension (exact)

    @property
    def clean(self):
        return not self.flags


def _exact_sweep(params, omegas, tol, preconditioner, drive_sign):
    out = []
    for omega in omegas:
        sop = build_superop(params.with_drive(drive_sign * omega))
        rep = steady_state(sop, tol=tol, compute_kernel_dim=False,
                           preconditioner=preconditioner)
        out.append((omega, rep.rho, rep.residual))
    return out


def _run_backend(config, params, sign, backend, flags, drive_sign=1.0):
    """Both sweep directions on one backend.  Returns rows + kept states.

    `drive_sign` scales every grid value before it is written into the
    model (the full-negation pairing flips the drive along with the other
    couplings); rows are still keyed by the unsigned grid value.
    """
    asc = list(config.omega_grid)
    if asc[0] > asc[-1]:
        asc = asc[::-1]
    desc = asc[::-1]
    rows = []
    kept = {}        # omega -> state from the ascending sweep
    if backend == "exact":
        mid = params.with_drive(drive_sign * asc[len(asc) // 2])
        prec = make_preconditioner(build_superop(mid))
        for direction, grid in (("ascending", asc), ("descending", desc)):
            try:
                points = _exact_sweep(params, grid, config.exact_tol, prec,
                                      drive_sign)
            except SolverFailureError as err:
                flags.append(f"exact solve failed ({sign}, {direction}): {err}")
                continue
            for omega, rho, res in points:
                rows.append(observable_row(
                    rho, omega, "exact", res, local_dim=params.local_dim,
                    sweep_direction=direction, sign_choice=sign))
                if direction == "ascending":
                    kept[omega] = rho
    else:
        seed_base = config.mpdo.seed + (1000 if sign == "lower" else 0)
        conv_kwargs = dict(residual_threshold=config.mpdo.residual_threshold,
                           sv_log_tol=config.mpdo.sv_log_tol,
                           check_interval=config.mpdo.check_interval,
                           step_budget=config.mpdo.step_budget)
        for k, (direction, grid) in enumerate(
                (("ascending", asc), ("descending", desc))):
            init = random_mpdo(params.n_sites, params.local_dim,
                               config.mpdo.chi, seed=seed_base + k)
            signed = [drive_sign * w for w in grid]
            for omega_signed, state, report in sweep_drive(
                    init, params, signed, dt=config.mpdo.dt, **conv_kwargs):
                omega = drive_sign * omega_signed
                if not report.converged:
                    flags.append(
                        f"mpdo non-convergence ({sign}, {direction}, "
                        f"omega={omega:g}): residual {report.final_residual:.3e}")
                rows.append(observable_row(
                    state, omega, "mpdo", report.final_residual,
                    sweep_direction=direction, sign_choice=sign))
                if direction == "ascending":
                    kept[omega] = state
    return rows, kept


def _row_key(rows):
    return {(r.backend, r.sign_choice, r.sweep_direction, round(r.omega, 12)): r
            for r in rows}


def _max_row_deviation(r1, r2):
    dp = max(np.max(np.abs(d1.probabilities - d2.probabilities))
             for d1, d2 in zip(r1.distributions, r2.distributions))
    dn = max(abs(a - b) for a, b in zip(r1.mean_n, r2.mean_n))
    dc = abs(r1.correlator - r2.correlator)
    return float(dp), float(dn), float(dc)


def _dense_or_none(state):
    try:
        return to_dense(state) if not hasattr(state, "validate") else state
    except Exception:
        return None


def run_experiment(config):
    """Execute the configured experiment.  Never raises on flagged outcomes."""
    flags = []
    base = config.base_params()
    signs = {"upper": base}
    if config.flip_mode is not None:
        signs["lower"] = apply_flip(base, config.flip_mode)
    backends = ("exact", "mpdo") if config.backend == "both" \
        else (config.backend,)

    rows = []
    kept = {}
    for sign, params in signs.items():
        # the full-negation pairing flips the drive along with the couplings
        drive_sign = -1.0 if (sign == "lower" and
                              config.flip_mode is FlipMode.FULL_NEGATION) \
            else 1.0
        for backend in backends:
            brows, bkept = _run_backend(config, params, sign, backend, flags,
                                        drive_sign=drive_sign)
            rows.extend(brows)
            kept[(backend, sign)] = bkept

    by_key = _row_key(rows)
    grid = sorted(config.omega_grid)

    # direction uniqueness cross-check
    uniqueness = []
    for (backend, sign) in kept:
        tol = config.exact_uniqueness_tol if backend == "exact" \
            else config.mpdo_uniqueness_tol
        for omega in grid:
            a = by_key.get((backend, sign, "ascending", round(omega, 12)))
            d = by_key.get((backend, sign, "descending", round(omega, 12)))
            if a is None or d is None:
                continue
            dp, dn, dc = _max_row_deviation(a, d)
            dev = max(dp, dn, dc)
            ok = dev <= tol
            uniqueness.append({"backend": backend, "sign": sign,
                               "omega": omega, "max_deviation": dev,
                               "tolerance": tol, "passed": ok})
            if not ok:
                flags.append(f"uniqueness check failed ({backend}, {sign}, "
                             f"omega={omega:g}): deviation {dev:.3e} > {tol:g}")

    # exact vs mpdo cross-check
    crosschecks = []
    if config.backend == "both":
        for sign in signs:
            for omega in grid:
                a = by_key.get(("exact", sign, "ascending", round(omega, 12)))
                b = by_key.get(("mpdo", sign, "ascending", round(omega, 12)))
                if a is None or b is None:
                    continue
                dp, dn, dc = _max_row_deviation(a, b)
                crosschecks.append({"sign": sign, "omega": omega,
                                    "max_dn": dn, "max_dp": dp, "dcorr": dc})
                if dn > 1e-2:
                    flags.append(f"backend cross-check ({sign}, omega={omega:g})"
                                 f": |d<n>| = {dn:.3e} > 1e-2")

    # sign-flip symmetry comparison
    symmetry = None
    if config.flip_mode is not None:
        tols = {"exact": config.exact_symmetry_tol,
                "mpdo": config.mpdo_symmetry_tol}
        sym_rows = []
        for backend in backends:
            tol = tols[backend]
            for omega in grid:
                up = by_key.get((backend, "upper", "ascending", round(omega, 12)))
                lo = by_key.get((backend, "lower", "ascending", round(omega, 12)))
                if up is None or lo is None:
                    continue
                dp, dn, dc = _max_row_deviation(up, lo)
                td = td_conj = float("nan")
                dim = base.dim
                if dim * dim <= DENSE_VEC_CAP:
                    rp = _dense_or_none(kept[(backend, "upper")][omega])
                    rm = _dense_or_none(kept[(backend, "lower")][omega])
                    if rp is not None and rm is not None:
                        td = trace_distance(rp, rm)
                        td_conj = trace_distance(rp, conjugate_state(rm))
                verdict = "invariant" if max(dp, dc) <= tol else "non-invariant"
                sym_rows.append(SymmetryRow(
                    backend=backend, omega=omega, max_abs_dp=dp,
                    abs_dcorr=dc, max_abs_dn=dn, td_plus_minus=td,
                    td_plus_conj_minus=td_conj, verdict=verdict))
        symmetry = SymmetryReport(flip_mode=config.flip_mode.value,
                                  tolerances=tols, rows=sym_rows)

    # exact-backend kernel dimension (one representative point per sign)
    nullspace_dims = {}
    if "exact" in backends:
        probe = grid[len(grid) // 2]
        for sign, params in signs.items():
            drive_sign = -1.0 if (sign == "lower" and
                                  config.flip_mode is FlipMode.FULL_NEGATION) \
                else 1.0
            sop = build_superop(params.with_drive(drive_sign * probe))
            try:
                rep = steady_state(sop, tol=config.exact_tol,
                                   compute_kernel_dim=True)
                nullspace_dims[sign] = rep.nullspace_dim
                if rep.nullspace_dim != 1:
                    flags.append(f"non-unique NESS suspected ({sign}): "
                                 f"kernel dimension {rep.nullspace_dim}")
            except SolverFailureError as err:
                flags.append(f"kernel-dimension probe failed ({sign}): {err}")

    result = RunResult(rows=rows, symmetry=symmetry, uniqueness=uniqueness,
                       backend_crosschecks=crosschecks, flags=flags,
                       nullspace_dims=nullspace_dims)
    result._kept_states = kept  # for optional state dumps
    return result


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def csv_lines(rows, local_dim):
    header = ("omega,site,mean_n," +
              ",".join(f"p{k}" for k in range(local_dim)) +
              ",corr_123,backend,residual,sweep_direction,sign_choice")
    lines = [header]
    ordered = sorted(rows, key=lambda r: (r.backend, r.sign_choice,
                                          r.sweep_direction, r.omega))
    for r in ordered:
        for site, dist in enumerate(r.distributions):
            probs = dist.clipped()
            lines.append(",".join(
                [_fmt(r.omega), str(site), _fmt(r.mean_n[site])]
                + [_fmt(p) for p in probs]
                + [_fmt(r.correlator), r.backend, _fmt(r.residual),
                   r.sweep_direction, r.sign_choice]))
    return lines


def summary_lines(config, result):
    lines = ["# driven-dissipative Bose-Hubbard chain: run summary",
             f"package version: {__version__}",
             f"numpy {np.__version__}, scipy {scipy.__version__}",
             "",
             "## configuration",
             json.dumps(config.to_dict(), indent=2, sort_keys=True),
             ""]
    if result.nullspace_dims:
        lines.append("## exact-backend kernel dimension")
        for sign, nd in sorted(result.nullspace_dims.items()):
            lines.append(f"  {sign}: {nd}")
        lines.append("")
    lines.append("## uniqueness (ascending vs descending sweeps)")
    for rec in result.uniqueness:
        lines.append(f"  {rec['backend']:5s} {rec['sign']:5s} "
                     f"omega={rec['omega']:g}: max deviation "
                     f"{rec['max_deviation']:.3e} (tol {rec['tolerance']:g}) "
                     f"{'ok' if rec['passed'] else 'FAILED'}")
    if result.backend_crosschecks:
        lines.append("")
        lines.append("## exact vs mpdo cross-check (ascending)")
        for rec in result.backend_crosschecks:
            lines.append(f"  {rec['sign']:5s} omega={rec['omega']:g}: "
                         f"max|d<n>|={rec['max_dn']:.3e} "
                         f"max|dP|={rec['max_dp']:.3e} "
                         f"|dcorr|={rec['dcorr']:.3e}")
    if result.symmetry is not None:
        lines.append("")
        lines.append(f"## sign-flip symmetry ({result.symmetry.flip_mode}), "
                     f"tolerances {result.symmetry.tolerances}")
        for r in result.symmetry.rows:
            lines.append(f"  {r.backend:5s} omega={r.omega:g}: "
                         f"max|dP|={r.max_abs_dp:.3e} "
                         f"|dcorr|={r.abs_dcorr:.3e} "
                         f"max|d<n>|={r.max_abs_dn:.3e} "
                         f"td(+,-)={r.td_plus_minus:.3e} "
                         f"td(+,conj(-))={r.td_plus_conj_minus:.3e} "
                         f"-> {r.verdict}")
    lines.append("")
    if result.flags:
        lines.append("## flags")
        lines.extend(f"  {f}" for f in result.flags)
    else:
        lines.append("## flags\n  none")
    return lines


def dump_state(path, rho):
    """Binary dump: int64 dimension header, then row-major complex doubles."""
    data = rho.data if hasattr(rho, "data") else np.asarray(rho)
    with open(path, "wb") as fh:
        np.array([data.shape[0]], dtype=np.int64).tofile(fh)
        np.ascontiguousarray(data, dtype=np.complex128).tofile(fh)


def load_state_dump(path):
    with open(path, "rb") as fh:
        dim = int(np.fromfile(fh, dtype=np.int64, count=1)[0])
        data = np.fromfile(fh, dtype=np.complex128, count=dim * dim)
    return data.reshape(dim, dim)


def emit(result, config, out_dir=None):
    """Write results.csv, summary.txt and optional state dumps.

    Byte-stable for identical (config, seed) inputs.  Returns the paths
    written.
    """
    out_dir = out_dir or config.output_dir or os.environ.get(
        OUTPUT_DIR_ENV, ".")
    os.makedirs(out_dir, exist_ok=True)
    local_dim = config.base_params().local_dim
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(csv_lines(result.rows, local_dim)) + "\n")
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write("\n".join(summary_lines(config, result)) + "\n")
    paths = [csv_path, summary_path]
    if config.dump_states:
        for (backend, sign), states in getattr(result, "_kept_states",
                                               {}).items():
            for omega, state in states.items():
                rho = state if hasattr(state, "validate") else to_dense(state)
                p = os.path.join(out_dir,
                                 f"ness_{backend}_{sign}_{omega:.6f}.bin")
                dump_state(p, rho)
                paths.append(p)
    return paths
