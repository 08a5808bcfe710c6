"""End-to-end acceptance checks at the full experiment scale.

Each test is one headline criterion, run at the trimer scale (three sites,
local dimension 5, loss rate 1) with the default drive grid 0.1..1.0.
Expensive exact solves and tensor-network sweeps are cached per session so
the criteria can share them.
"""

import math

import numpy as np
import pytest

from ddbh.exact import evolve, nullspace_dimension, steady_state
from ddbh.harness import ExperimentConfig, MpdoSettings, emit, run_experiment
from ddbh.liouville import build_superop, vectorize
from ddbh.model import FlipMode, ModelParams, apply_flip, table1_preset
from ddbh.mpdo import converge_to_ness, random_mpdo, sweep_drive, to_dense
from ddbh.observables import (conjugate_state, correlator, diagnostics,
                              mean_occupation, number_distribution,
                              trace_distance)

OMEGA_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))
LOCAL_DIM = 5
N_SITES = 3

#: states accumulated by the criteria below, re-validated wholesale at the end
_REPORTED_STATES = []


def _record(label, rho):
    data = rho.data if hasattr(rho, "data") else rho
    _REPORTED_STATES.append((label, np.asarray(data)))


def _observables(state, local_dim=None):
    """(per-site distributions, per-site <n>, three-site correlator)."""
    dists = [number_distribution(state, s, local_dim=local_dim).probabilities
             for s in range(N_SITES)]
    means = [mean_occupation(state, s, local_dim=local_dim)
             for s in range(N_SITES)]
    corr = correlator(state, range(N_SITES), local_dim=local_dim)
    return dists, means, corr


@pytest.fixture(scope="session")
def mpdo_sweeps():
    """Cached chi=15 tensor-network sweeps keyed by (preset, sign, direction)."""
    cache = {}

    def get(preset, sign, direction):
        key = (preset, sign, direction)
        if key not in cache:
            params = table1_preset(preset, sign)
            grid = list(OMEGA_GRID) if direction == "ascending" \
                else list(OMEGA_GRID)[::-1]
            seed = 1234 + (1000 if sign == "lower" else 0) \
                + (1 if direction == "descending" else 0)
            init = random_mpdo(N_SITES, LOCAL_DIM, chi=15, seed=seed)
            results = sweep_drive(init, params, grid, dt=0.1,
                                  residual_threshold=1e-3, check_interval=100,
                                  step_budget=40000)
            for omega, _, report in results:
                assert report.converged, \
                    f"{preset}/{sign}/{direction} omega={omega} stalled at " \
                    f"residual {report.final_residual:.3e}"
            cache[key] = {omega: (state, report)
                          for omega, state, report in results}
        return cache[key]

    return get


# ---------------------------------------------------------------------------
# 1. Equation-of-motion conjugation symmetry at the generator level
# ---------------------------------------------------------------------------

def test_c01_generator_conjugation_symmetry():
    rng = np.random.default_rng(100)
    worst = 0.0
    for _ in range(50):
        n_sites = int(rng.integers(1, 4))
        d = int(rng.integers(2, 5))
        p = ModelParams(
            n_sites=n_sites,
            detuning=rng.uniform(-10, 10, n_sites),
            hopping=rng.uniform(-5, 5, n_sites - 1),
            interaction=rng.uniform(-10, 10, n_sites),
            drive=float(rng.uniform(0, 2)),
            local_dim=d)
        A = rng.normal(size=(p.dim, p.dim)) + 1j * rng.normal(size=(p.dim,
                                                                    p.dim))
        rho = A @ A.conj().T
        rho /= np.trace(rho)
        L = build_superop(p).matrix
        L_neg = build_superop(apply_flip(p, FlipMode.FULL_NEGATION)).matrix
        lhs = np.conj(L @ vectorize(rho).data)
        rhs = L_neg @ vectorize(rho.conj()).data
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    assert worst < 1e-12, f"max entrywise defect {worst:.3e}"
    print(f"PASS generator conjugation symmetry: max defect {worst:.3e}")


# ---------------------------------------------------------------------------
# 2. Steady-state conjugation theorem (exact backend, full drive grid)
# ---------------------------------------------------------------------------

def test_c02_ness_conjugation_theorem(ness_solver):
    upper = table1_preset("uniform-case1", "upper")
    negated = apply_flip(upper, FlipMode.FULL_NEGATION)
    worst = 0.0
    for omega in OMEGA_GRID:
        rho_u = ness_solver(upper, omega).rho
        # the full negation includes the drive sign
        rho_n = ness_solver(negated, -omega).rho
        td = trace_distance(rho_u, conjugate_state(rho_n))
        worst = max(worst, td)
        _record(f"uniform-case1 upper omega={omega}", rho_u)
        _record(f"uniform-case1 negated omega={-omega}", rho_n)
    assert worst < 1e-8, f"max trace distance {worst:.3e}"
    print(f"PASS steady-state conjugation theorem: max trace distance {worst:.3e}")


# ---------------------------------------------------------------------------
# 3. Number-statistics invariance under the number-conserving flip
# ---------------------------------------------------------------------------

def test_c03_number_statistics_invariance_exact(ness_solver):
    worst_dp, worst_dc = 0.0, 0.0
    for preset in ("uniform-case1", "disordered-case1"):
        pu = table1_preset(preset, "upper")
        pl = table1_preset(preset, "lower")
        for omega in OMEGA_GRID:
            ru = ness_solver(pu, omega).rho
            rl = ness_solver(pl, omega).rho
            du, nu, cu = _observables(ru, local_dim=LOCAL_DIM)
            dl, nl, cl = _observables(rl, local_dim=LOCAL_DIM)
            dp = max(np.max(np.abs(a - b)) for a, b in zip(du, dl))
            worst_dp = max(worst_dp, float(dp))
            worst_dc = max(worst_dc, abs(cu - cl))
            _record(f"{preset} lower omega={omega}", rl)
    assert worst_dp < 1e-8, f"max |dP| {worst_dp:.3e}"
    assert worst_dc < 1e-8, f"max |dcorr| {worst_dc:.3e}"
    print(f"PASS number-statistics invariance (exact): "
          f"max|dP|={worst_dp:.3e} max|dcorr|={worst_dc:.3e}")


def test_c03_number_statistics_invariance_mpdo(mpdo_sweeps):
    worst_dp, worst_dc = 0.0, 0.0
    for preset in ("uniform-case1", "disordered-case1"):
        up = mpdo_sweeps(preset, "upper", "ascending")
        lo = mpdo_sweeps(preset, "lower", "ascending")
        for omega in OMEGA_GRID:
            du, nu, cu = _observables(up[omega][0])
            dl, nl, cl = _observables(lo[omega][0])
            dp = max(np.max(np.abs(a - b)) for a, b in zip(du, dl))
            worst_dp = max(worst_dp, float(dp))
            worst_dc = max(worst_dc, abs(cu - cl))
    assert worst_dp < 1e-3, f"max |dP| {worst_dp:.3e}"
    assert worst_dc < 1e-3, f"max |dcorr| {worst_dc:.3e}"
    print(f"PASS number-statistics invariance (tensor network): "
          f"max|dP|={worst_dp:.3e} max|dcorr|={worst_dc:.3e}")


# ---------------------------------------------------------------------------
# 4. Non-invariance when the hopping sign is NOT flipped
# ---------------------------------------------------------------------------

def test_c04_non_invariance_under_partial_flip(ness_solver):
    for preset in ("uniform-case2", "disordered-case2"):
        gaps = []
        for sign in ("upper", "lower"):
            p = table1_preset(preset, sign)
            for omega in OMEGA_GRID:
                rep = ness_solver(p, omega)
                assert rep.residual < 1e-10, \
                    f"{preset}/{sign} omega={omega}: residual {rep.residual:.3e}"
                _record(f"{preset} {sign} omega={omega}", rep.rho)
        for omega in OMEGA_GRID:
            n1_u = mean_occupation(ness_solver(table1_preset(preset, "upper"),
                                               omega).rho, 0,
                                   local_dim=LOCAL_DIM)
            n1_l = mean_occupation(ness_solver(table1_preset(preset, "lower"),
                                               omega).rho, 0,
                                   local_dim=LOCAL_DIM)
            gaps.append(abs(n1_u - n1_l))
        assert max(gaps) > 1e-2, f"{preset}: max |d<n_1>| {max(gaps):.3e}"
        print(f"PASS non-invariance ({preset}): max |d<n_1>| = {max(gaps):.3e}")


# ---------------------------------------------------------------------------
# 5. Tensor-network vs exact cross-validation
# ---------------------------------------------------------------------------

def test_c05_mpdo_exact_cross_validation(ness_solver, mpdo_sweeps):
    p = table1_preset("uniform-case1", "upper")
    exact = ness_solver(p, 0.5).rho
    state15, report15 = mpdo_sweeps("uniform-case1", "upper", "ascending")[0.5]
    assert report15.final_residual <= 1e-3
    rho15 = to_dense(state15)
    dn = max(abs(mean_occupation(state15, s)
                 - mean_occupation(exact, s, local_dim=LOCAL_DIM))
             for s in range(N_SITES))
    td15 = trace_distance(rho15, exact)
    assert dn < 1e-2, f"chi=15 max |d<n>| {dn:.3e}"
    assert td15 < 5e-2, f"chi=15 trace distance {td15:.3e}"
    _record("uniform-case1 chi15 omega=0.5", rho15)

    init = random_mpdo(N_SITES, LOCAL_DIM, chi=50, seed=4321)
    state50, report50 = converge_to_ness(init, p.with_drive(0.5), dt=0.1,
                                         residual_threshold=1e-4,
                                         check_interval=100,
                                         step_budget=40000)
    assert report50.converged
    td50 = trace_distance(to_dense(state50), exact)
    assert td50 < 1e-3, f"chi=50 trace distance {td50:.3e}"
    _record("uniform-case1 chi50 omega=0.5", to_dense(state50))
    print(f"PASS cross-validation: chi=15 |d<n>|={dn:.3e} td={td15:.3e}; "
          f"chi=50 td={td50:.3e}")


# ---------------------------------------------------------------------------
# 6. Uniqueness protocol: sweep direction independence + kernel dimension
# ---------------------------------------------------------------------------

PRESETS = ("uniform-case1", "uniform-case2",
           "disordered-case1", "disordered-case2")


def test_c06_sweep_direction_agreement_exact(ness_solver):
    worst = 0.0
    for preset in PRESETS:
        p = table1_preset(preset, "upper")
        for omega in OMEGA_GRID:
            asc = ness_solver(p, omega).rho
            desc = ness_solver.fresh(p, omega).rho   # independent second solve
            da, na, ca = _observables(asc, local_dim=LOCAL_DIM)
            dd, nd, cd = _observables(desc, local_dim=LOCAL_DIM)
            dev = max(max(np.max(np.abs(a - b)) for a, b in zip(da, dd)),
                      max(abs(a - b) for a, b in zip(na, nd)),
                      abs(ca - cd))
            worst = max(worst, float(dev))
    assert worst < 1e-8, f"max per-point deviation {worst:.3e}"
    print(f"PASS direction independence (exact): max deviation {worst:.3e}")


def test_c06_sweep_direction_agreement_mpdo(mpdo_sweeps):
    worst = 0.0
    for preset in PRESETS:
        asc = mpdo_sweeps(preset, "upper", "ascending")
        desc = mpdo_sweeps(preset, "upper", "descending")
        for omega in OMEGA_GRID:
            da, na, ca = _observables(asc[omega][0])
            dd, nd, cd = _observables(desc[omega][0])
            dev = max(max(np.max(np.abs(a - b)) for a, b in zip(da, dd)),
                      max(abs(a - b) for a, b in zip(na, nd)),
                      abs(ca - cd))
            worst = max(worst, float(dev))
    assert worst < 1e-3, f"max per-point deviation {worst:.3e}"
    print(f"PASS direction independence (tensor network): "
          f"max deviation {worst:.3e}")


def test_c06_kernel_dimension_is_one():
    dims = {}
    for preset in PRESETS:
        p = table1_preset(preset, "upper").with_drive(0.5)
        dims[preset] = nullspace_dimension(build_superop(p))
    assert all(v == 1 for v in dims.values()), dims
    print(f"PASS kernel dimension: {dims}")


# ---------------------------------------------------------------------------
# 7. Closed-form checks
# ---------------------------------------------------------------------------

def test_c07_closed_forms(ness_solver):
    # undriven chain decays to the vacuum
    p = table1_preset("uniform-case1", "upper")
    rho0 = ness_solver(p, 0.0).rho
    occupations = [mean_occupation(rho0, s, local_dim=LOCAL_DIM)
                   for s in range(N_SITES)]
    assert max(occupations) < 1e-10
    _record("uniform-case1 upper omega=0", rho0)

    # single linear mode: coherent NESS with <n> = W^2/(D^2 + g^2/4) = 0.128
    single = ModelParams(n_sites=1, detuning=(1.0,), hopping=(),
                         interaction=(0.0,), drive=0.4, local_dim=12)
    rho = steady_state(build_superop(single), compute_kernel_dim=False).rho
    nbar = mean_occupation(rho, 0, local_dim=12)
    assert nbar == pytest.approx(0.128, abs=1e-3)
    probs = number_distribution(rho, 0, local_dim=12).probabilities
    poisson = np.array([np.exp(-nbar) * nbar ** k / math.factorial(k)
                        for k in range(12)])
    assert np.max(np.abs(probs - poisson)) < 1e-6

    # free decay of one excitation: <n(t=1)> = 1/e
    decay = ModelParams(n_sites=1, detuning=(0.0,), hopping=(),
                        interaction=(0.0,), local_dim=2)
    sop = build_superop(decay)
    rho1 = evolve(np.diag([0.0, 1.0]).astype(complex), sop, t_final=1.0,
                  dt=1e-3)
    n_t1 = mean_occupation(rho1, 0, local_dim=2)
    assert n_t1 == pytest.approx(np.exp(-1.0), abs=1e-6)
    print(f"PASS closed forms: vacuum max<n>={max(occupations):.1e}, "
          f"coherent <n>={nbar:.6f}, decay <n(1)>={n_t1:.9f}")


# ---------------------------------------------------------------------------
# 8. Every reported steady state is a valid density matrix
# ---------------------------------------------------------------------------

def test_c08_reported_states_are_physical(ness_solver):
    if not _REPORTED_STATES:   # criterion run in isolation: solve afresh
        for preset in PRESETS:
            for sign in ("upper", "lower"):
                rep = ness_solver(table1_preset(preset, sign), 0.5)
                _record(f"{preset} {sign} omega=0.5", rep.rho)
    assert _REPORTED_STATES
    for label, data in _REPORTED_STATES:
        diag = diagnostics(data)
        assert abs(diag["trace"] - 1.0) < 1e-8, (label, diag["trace"])
        assert diag["hermiticity_defect"] < 1e-8, (label,
                                                   diag["hermiticity_defect"])
        assert diag["min_eigenvalue"] >= -1e-6, (label,
                                                 diag["min_eigenvalue"])
    print(f"PASS state hygiene: {len(_REPORTED_STATES)} states validated")


# ---------------------------------------------------------------------------
# 9. Trotter splitting carries a third-order local error
# ---------------------------------------------------------------------------

def test_c09_trotter_local_error_order():
    import scipy.sparse.linalg as spla
    from ddbh.mpdo import trotter_step
    rng = np.random.default_rng(101)
    p = ModelParams(n_sites=3, detuning=rng.uniform(-4, 4, 3),
                    hopping=rng.uniform(-2, 2, 2),
                    interaction=rng.uniform(-6, 6, 3),
                    drive=0.5, local_dim=2)
    sop = build_superop(p)
    state = random_mpdo(3, 2, chi=64, seed=102)
    from ddbh.mpdo import contract_to_matrix
    rho0 = contract_to_matrix(state)
    v0 = rho0.reshape(-1, order="F")
    errs = []
    for dt in (0.1, 0.05, 0.025):
        stepped = contract_to_matrix(trotter_step(state, p, dt))
        exact = spla.expm_multiply(sop.matrix * dt, v0).reshape(
            rho0.shape, order="F")
        errs.append(np.max(np.abs(stepped - exact)))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert r1 == pytest.approx(8.0, rel=0.2), f"ratio {r1:.3f}"
    assert r2 == pytest.approx(8.0, rel=0.2), f"ratio {r2:.3f}"
    print(f"PASS local error order: halving dt scales the error by "
          f"{r1:.2f}, {r2:.2f} (expect 8)")


# ---------------------------------------------------------------------------
# 10. Byte-level reproducibility of emitted results
# ---------------------------------------------------------------------------

def test_c10_deterministic_csv_output(tmp_path):
    cfg = ExperimentConfig(preset="uniform-case1", backend="both",
                           omega_grid=(0.3,),
                           flip_mode=FlipMode.NUMBER_CONSERVING,
                           mpdo=MpdoSettings(chi=15, seed=1234))
    out = []
    for name in ("first", "second"):
        d = tmp_path / name
        emit(run_experiment(cfg), cfg, out_dir=str(d))
        out.append((d / "results.csv").read_bytes())
        assert (d / "summary.txt").exists()
    assert out[0] == out[1]
    assert out[0].startswith(b"omega,site,mean_n,p0,p1,p2,p3,p4,corr_123,")
    print(f"PASS determinism: {len(out[0])} byte CSV reproduced exactly")
