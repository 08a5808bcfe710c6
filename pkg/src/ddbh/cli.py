"""Command-line interface.

Subcommands:
  solve     one steady state at a single drive value
  sweep     bidirectional drive sweep for one sign choice
  symmetry  both sign choices of a flip transformation, plus the comparison
  presets   list the built-in trimer parameter sets

A JSON config file (--config) may supply any ExperimentConfig field; command
line flags override it.  Exit codes: 0 all runs converged and all checks
passed, 2 completed with flags, 1 hard error.
"""

import argparse
import json
import sys

from .harness import (ExperimentConfig, run_experiment, emit,
                      OUTPUT_DIR_ENV)
from .model import FlipMode, PRESET_NAMES, PRESET_FLIP_MODE, table1_preset


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file (flags override it)")
    sub.add_argument("--preset", choices=PRESET_NAMES)
    sub.add_argument("--params-json",
                     help="explicit model parameters: inline JSON object "
                          "or path to a JSON file")
    sub.add_argument("--backend", choices=("exact", "mpdo", "both"))
    sub.add_argument("--local-dim", type=int)
    sub.add_argument("--chi", type=int)
    sub.add_argument("--dt", type=float)
    sub.add_argument("--residual-threshold", type=float)
    sub.add_argument("--sv-log-tol", type=float)
    sub.add_argument("--check-interval", type=int)
    sub.add_argument("--step-budget", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or .)")
    sub.add_argument("--dump-states", action="store_true", default=None,
                     help="also write binary density-matrix dumps")


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="ddbh",
        description="steady states of driven-dissipative Bose-Hubbard chains")
    sp = ap.add_subparsers(dest="command", required=True)

    solve = sp.add_parser("solve", help="single steady state at one drive value")
    _add_common(solve)
    solve.add_argument("--omega", type=float, required=False,
                       help="drive amplitude (required unless in config)")

    sweep = sp.add_parser("sweep", help="bidirectional drive sweep, one sign choice")
    _add_common(sweep)
    sweep.add_argument("--omegas", help="comma-separated drive grid, monotone")

    sym = sp.add_parser("symmetry",
                        help="run both sign choices and compare observables")
    _add_common(sym)
    sym.add_argument("--omegas", help="comma-separated drive grid, monotone")
    sym.add_argument("--flip-mode",
                     choices=[m.value for m in FlipMode],
                     help="transformation linking the two sign choices "
                          "(defaults to the preset's pairing)")

    sp.add_parser("presets", help="list built-in trimer parameter sets")
    return ap


def _config_from_args(args, command):
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    if args.preset:
        cfg["preset"] = args.preset
    if args.params_json:
        text = args.params_json
        if not text.lstrip().startswith("{"):
            with open(text) as fh:        # treat as a path to a JSON file
                text = fh.read()
        cfg["model"] = json.loads(text)
    if args.backend:
        cfg["backend"] = args.backend
    if args.local_dim:
        cfg["local_dim"] = args.local_dim
    mp = cfg.get("mpdo", {})
    for flag, key in (("chi", "chi"), ("dt", "dt"),
                      ("residual_threshold", "residual_threshold"),
                      ("sv_log_tol", "sv_log_tol"),
                      ("check_interval", "check_interval"),
                      ("step_budget", "step_budget"), ("seed", "seed")):
        val = getattr(args, flag)
        if val is not None:
            mp[key] = val
    if mp:
        cfg["mpdo"] = mp
    if getattr(args, "omegas", None):
        cfg["omega_grid"] = [float(x) for x in args.omegas.split(",")]
    if getattr(args, "omega", None) is not None:
        cfg["omega_grid"] = [args.omega]
    if getattr(args, "flip_mode", None):
        cfg["flip_mode"] = args.flip_mode
    if args.out:
        cfg["output_dir"] = args.out
    if args.dump_states is not None:
        cfg["dump_states"] = args.dump_states
    if command in ("solve", "sweep"):
        cfg.pop("flip_mode", None)   # single sign choice for these commands
    config = ExperimentConfig.from_dict(cfg)
    if command == "symmetry" and config.flip_mode is None:
        mode = config.resolved_flip_mode()
        if mode is None:
            raise ValueError("symmetry requires --flip-mode or a preset")
        config = ExperimentConfig.from_dict({**config.to_dict(),
                                             "flip_mode": mode.value})
    return config


def _print_presets():
    print("built-in trimer presets (dissipation rate 1, drive set by sweep):")
    for name in PRESET_NAMES:
        p = table1_preset(name, "upper")
        q = table1_preset(name, "lower")
        mode = PRESET_FLIP_MODE[name].value
        print(f"  {name} (sign pairing: {mode})")
        print(f"    upper: J={p.hopping} U={p.interaction} D={p.detuning}")
        print(f"    lower: J={q.hopping} U={q.interaction} D={q.detuning}")


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "presets":
        _print_presets()
        return 0
    try:
        if args.command == "solve" and args.omega is None and not args.config:
            print("error: solve requires --omega (or a config file)",
                  file=sys.stderr)
            return 1
        config = _config_from_args(args, command=args.command)
    except (ValueError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    try:
        result = run_experiment(config)
        paths = emit(result, config)
    except Exception as err:  # hard failure
        print(f"error: {err}", file=sys.stderr)
        return 1
    for p in paths:
        print(f"wrote {p}")
    if result.flags:
        print("completed with flags:")
        for f in result.flags:
            print(f"  {f}")
        return 2
    print("all runs converged; all checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
