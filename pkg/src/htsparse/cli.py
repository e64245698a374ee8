"""Command-line surface: bounds, recovery runs, sweeps, and experiments.

Every command that writes a result file also writes ``<out>.manifest.json``
recording the command, all resolved parameters, the master seed and the
package version; re-running with ``--config <manifest>`` (or the same flags)
reproduces the result file byte-for-byte.  Parameter precedence is
flags > config file > built-in defaults.

Exit codes: 0 success, 2 usage/configuration error, 3 I/O error.  Solver
non-recovery is data, never a failing exit.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analysis import svrg_coefficients
from .harness import (
    SOLVER_NAMES,
    Scenario,
    classify_experiment,
    fit_measurement_line,
    load_mnist_idx,
    matched_batch_iterations,
    min_measurements_search,
    pairwise_task,
    run_trials,
    sweep_phase_diagram,
    write_results,
)
from .solvers_batch import SolverConfig
from .solvers_stochastic import SagaConfig, SvrgConfig
from .thresholding import deviation_bound

OUT_DIR_ENV = "HTSPARSE_OUT_DIR"

_BATCH_SOLVERS = ("iht", "pgd", "cosamp", "grasp")

DEFAULTS = {
    "bound": {"k": None, "K": None, "d": None, "s": None, "out": None,
              "format": "json"},
    "recover": {
        "solver": "ht-svrg", "n": 100, "d": 256, "K": 4, "k": 0, "m": 0,
        "stages": 10000, "eta": 0.0, "omega": math.inf, "trials": 100,
        "noise_sigma": 0.0, "design": "gaussian", "success_tol": 1e-3,
        "seed": 0, "jobs": 1, "max_iters": 2000, "tol_residual": 1e-12,
        "saga_steps": 0, "full_scale": False, "out": None, "format": "csv",
    },
    "sweep": {
        "solver": "pgd", "d": 256, "n_grid": "16:256:16", "K_grid": "1:25:4",
        "trials": 50, "seed": 0, "jobs": 1, "max_iters": 300,
        "tol_residual": 1e-9, "full_scale": False, "out": None, "format": "csv",
    },
    "min-measurements": {
        "solver": "pgd", "K_list": "2,6,10,14,18", "target": 95, "d": 256,
        "trials": 50, "coarse_step": 8, "seed": 0, "jobs": 1,
        "max_iters": 300, "tol_residual": 1e-9, "out": None, "format": "csv",
    },
    "classify": {
        "images": None, "labels": None, "test_images": None,
        "test_labels": None, "pairs": "0v9,1v7,2v3,4v5,6v8",
        "k_list": "10,30,70,150,300,784", "stages": 30, "gamma": 1e-5,
        "m": 0, "eta": 0.0, "seed": 0, "out": None, "format": "json",
    },
    "convergence": {
        "corollary1": False, "c": 0.0, "eta_frac": 0.2, "eta": 0.0,
        "alpha": 0.0, "L": 1.0, "m": 0.0, "nu": 0.0, "omega": 1.0,
        "T": 0.0, "out": None, "format": "json",
    },
}


class UsageError(ValueError):
    """Configuration problem that should exit with code 2."""


def _parse_grid(text: str):
    """Grid syntax: 'start:stop:step' (inclusive) or 'a,b,c'."""
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad grid {text!r}; expected start:stop:step")
        start, stop, step = (int(p) for p in parts)
        if step < 1 or stop < start:
            raise UsageError(f"bad grid {text!r}")
        return list(range(start, stop + 1, step))
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}") from exc


def _resolve_out(path: str) -> Path:
    out = Path(path)
    base = os.environ.get(OUT_DIR_ENV)
    if base and not out.is_absolute():
        out = Path(base) / out
    return out


def _write_manifest(out_path: Path, command: str, params: dict, seed: int) -> None:
    manifest = {
        "command": command,
        "parameters": params,
        "master_seed": seed,
        "artifact_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _merge_params(command: str, args: argparse.Namespace) -> dict:
    params = dict(DEFAULTS[command])
    config_path = getattr(args, "config", None)
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if config_path:
        try:
            with open(config_path) as fh:
                payload = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        if payload.get("command", command) != command:
            raise UsageError(
                f"config file is for command {payload.get('command')!r}, not {command!r}")
        file_params = payload.get("parameters", payload)
        unknown = set(file_params) - set(params)
        if unknown:
            raise UsageError(f"unknown config parameters: {sorted(unknown)}")
        params.update(file_params)
    params.update(cli)
    return params


def _solver_config(params: dict, n: int, K: int, d: int):
    """Build the per-run solver config from resolved CLI parameters."""
    solver = params["solver"]
    if solver not in SOLVER_NAMES:
        raise UsageError(f"unknown solver {solver!r}; choose from {SOLVER_NAMES}")
    k = params.get("k") or (K if solver in ("iht", "cosamp", "grasp")
                            else min(9 * K, d))
    eta = params.get("eta") or None
    if solver in _BATCH_SOLVERS:
        eta = 1.0 if (solver == "iht" and eta is None) else eta
        return SolverConfig(k=k, eta=eta, max_iters=params["max_iters"],
                            tol_residual=params["tol_residual"])
    if solver == "ht-svrg":
        m = params.get("m") or 3 * n
        tol_obj = 0.5 * params["tol_residual"] ** 2 / n
        return SvrgConfig(S=params["stages"], m=m, k=k, eta=eta,
                          omega=params.get("omega", math.inf),
                          tol_objective=tol_obj)
    m = params.get("m") or 3 * n
    steps = params.get("saga_steps") or params["stages"] * m
    tol_obj = 0.5 * params["tol_residual"] ** 2 / n
    return SagaConfig(k=k, max_steps=steps, eta=eta, tol_objective=tol_obj)


def cmd_bound(params: dict) -> int:
    summary = deviation_bound(params["k"], params["K"], params["d"], params["s"])
    print(f"k={summary.k} K={summary.K} d={summary.d}"
          + (f" s={summary.s}" if summary.s is not None else ""))
    print(f"rho={summary.rho:.6f}  nu={summary.nu:.6f}  sqrt_nu={summary.sqrt_nu:.6f}")
    print(f"legacy factor={summary.legacy_factor:.1f}  "
          f"jain factor={summary.jain_factor:.6f}")
    if params["out"]:
        out = _resolve_out(params["out"])
        with open(out, "w") as fh:
            json.dump(dataclasses.asdict(summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(out, "bound", params, seed=0)
    return 0


def cmd_recover(params: dict) -> int:
    if params["trials"] < 1:
        raise UsageError("trials must be >= 1")
    trials = 1000 if params["full_scale"] else params["trials"]
    n, d, K = params["n"], params["d"], params["K"]
    config = _solver_config(params, n, K, d)
    scenario = Scenario(n=n, d=d, K=K, noise_sigma=params["noise_sigma"],
                        design=params["design"])
    result = run_trials(params["solver"], config, scenario, trials,
                        success_tol=params["success_tol"],
                        master_seed=params["seed"], jobs=params["jobs"])
    print(f"solver={result.solver} n={result.n} K={result.K} k={result.k} "
          f"trials={result.trials}")
    print(f"success_rate={result.success_rate:.1f}%  "
          f"mean_rel_error={result.mean_rel_error:.3e}")
    if params["out"]:
        out = _resolve_out(params["out"])
        write_results([result], out, params["format"])
        _write_manifest(out, "recover", params, params["seed"])
    return 0


def cmd_sweep(params: dict) -> int:
    if params["trials"] < 1:
        raise UsageError("trials must be >= 1")
    n_grid = _parse_grid(params["n_grid"])
    K_grid = _parse_grid(params["K_grid"])
    if params["full_scale"]:
        n_grid = list(range(8, params["d"] + 1, 8))
        K_grid = list(range(1, 26, 2))
    d = params["d"]

    def cell_config(n: int, K: int):
        return _solver_config(params, n, K, d)

    results = sweep_phase_diagram(params["solver"], cell_config, n_grid,
                                  K_grid, d, params["trials"],
                                  master_seed=params["seed"],
                                  jobs=params["jobs"])
    print(f"sweep over {len(n_grid)} x {len(K_grid)} cells, "
          f"{params['trials']} trials each")
    for res in results[: min(5, len(results))]:
        print(f"  n={res.n} K={res.K}: {res.success_rate:.0f}%")
    if params["out"]:
        out = _resolve_out(params["out"])
        write_results(results, out, params["format"])
        _write_manifest(out, "sweep", params, params["seed"])
    return 0


def cmd_min_measurements(params: dict) -> int:
    if params["trials"] < 1:
        raise UsageError("trials must be >= 1")
    if params["target"] not in (95, 99):
        raise UsageError("target must be 95 or 99")
    K_list = _parse_grid(params["K_list"])
    d = params["d"]

    def cell_config(n: int, K: int):
        return _solver_config(params, n, K, d)

    rows = []
    for K in K_list:
        res = min_measurements_search(
            params["solver"], cell_config, K, params["target"], d,
            params["trials"], coarse_step=params["coarse_step"],
            master_seed=params["seed"], jobs=params["jobs"])
        rows.append(res)
        print(f"K={K}: n_min={res.n} (rate {res.rate_at_n:.0f}%"
              + (", capped)" if res.capped else ")"))
    if len(K_list) >= 2:
        fit = fit_measurement_line([r.K for r in rows], [r.n for r in rows])
        print(f"linear fit: n ~ {fit.slope:.2f} K + {fit.intercept:.2f} "
              f"(R^2={fit.r_squared:.3f})")
    if params["out"]:
        out = _resolve_out(params["out"])
        payload = {"schema": "htsparse.minmeas.v1",
                   "rows": [r._asdict() for r in rows]}
        if len(K_list) >= 2:
            payload["fit"] = fit._asdict()
        with open(out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(out, "min-measurements", params, params["seed"])
    return 0


def cmd_classify(params: dict) -> int:
    for key in ("images", "labels", "test_images", "test_labels"):
        if not params.get(key):
            raise UsageError(f"--{key.replace('_', '-')} is required")
    try:
        train = load_mnist_idx(params["images"], params["labels"])
        test = load_mnist_idx(params["test_images"], params["test_labels"])
    except OSError as exc:
        raise UsageError(f"cannot read dataset: {exc}") from exc
    k_list = _parse_grid(params["k_list"])
    pairs = []
    for token in str(params["pairs"]).split(","):
        try:
            a, b = token.split("v")
            pairs.append((int(a), int(b)))
        except ValueError as exc:
            raise UsageError(f"bad pair {token!r}; expected like 0v9") from exc
    output = []
    for a, b in pairs:
        runs = classify_experiment(
            pairwise_task(train, a, b), pairwise_task(test, a, b), k_list,
            m=params["m"], gamma=params["gamma"],
            eta=params.get("eta") or None, stages=params["stages"],
            rng_seed=params["seed"])
        for run in runs:
            print(f"{a}v{b} k={run.k}: test acc {run.test_accuracy:.4f}")
            output.append({
                "pair": f"{a}v{b}", "k": run.k,
                "test_accuracy": run.test_accuracy,
                "train_accuracy": run.train_accuracy,
                "stage_objectives": run.stage_objectives,
                "weights": run.weights.tolist(),
            })
    if params["out"]:
        out = _resolve_out(params["out"])
        with open(out, "w") as fh:
            json.dump({"schema": "htsparse.classify.v1", "runs": output},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(out, "classify", params, params["seed"])
    return 0


def cmd_convergence(params: dict) -> int:
    if params["corollary1"]:
        c = params["c"]
        if not c >= 1:
            raise UsageError("--c must be >= 1 in the fixed-rate regime")
        if abs(params["eta_frac"] - 0.2) > 1e-12:
            raise UsageError("the fixed-rate regime requires --eta-frac 0.2")
        L = params["L"]
        eta = 0.2 / L
        alpha = L / c
        nu = 1.0 / (1.0 - eta * alpha)
        m = 12.5 * (5.0 * c - 1.0)
        coeffs = svrg_coefficients(eta, alpha, L, m, nu, params["omega"], 0.0)
        resolved = {"eta": eta, "alpha": alpha, "L": L, "m": m, "nu": nu,
                    "omega": params["omega"], "T": 0.0,
                    "k_over_K": 25.0 * c * c}
    else:
        needed = ("eta", "alpha", "m", "nu")
        if any(not params[k] for k in needed):
            raise UsageError(
                "supply --eta --alpha --m --nu (and optionally --L --omega --T), "
                "or use --corollary1 --c C")
        coeffs = svrg_coefficients(params["eta"], params["alpha"], params["L"],
                                   params["m"], params["nu"], params["omega"],
                                   params["T"])
        resolved = {k: params[k] for k in
                    ("eta", "alpha", "L", "m", "nu", "omega", "T")}
    print(f"regime={coeffs.regime}  beta={coeffs.beta:.12g}  "
          f"tau={coeffs.tau:.6g}  kappa={coeffs.kappa:.6g}  "
          f"feasible={coeffs.feasible}")
    if params["out"]:
        out = _resolve_out(params["out"])
        payload = {"inputs": resolved, "coefficients": dataclasses.asdict(coeffs)}
        with open(out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(out, "convergence", params, params.get("seed", 0))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="htsparse",
        description="Hard-thresholding sparse optimization: bounds, solvers, "
                    "and experiment reproduction.")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def add_common(p):
        p.add_argument("--config", default=None,
                       help="JSON manifest to pre-fill parameters (flags win)")
        p.add_argument("--out", default=S, help="result file path "
                       f"(relative paths resolve against ${OUT_DIR_ENV})")
        p.add_argument("--format", default=S, choices=("csv", "json"),
                       help="result file format")

    p = sub.add_parser("bound", help="print the thresholding deviation bound")
    p.add_argument("--k", type=int, default=S, help="projection sparsity (count)")
    p.add_argument("--K", type=int, default=S, help="target sparsity (count)")
    p.add_argument("--d", type=int, default=S, help="ambient dimension (count)")
    p.add_argument("--s", type=int, default=S, help="known input sparsity (count)")
    add_common(p)

    p = sub.add_parser("recover", help="randomized recovery trials for one setting")
    p.add_argument("--solver", default=S, choices=SOLVER_NAMES)
    p.add_argument("--n", type=int, default=S, help="measurements (default 100)")
    p.add_argument("--d", type=int, default=S, help="dimension (default 256)")
    p.add_argument("--K", type=int, default=S, help="true sparsity (default 4)")
    p.add_argument("--k", type=int, default=S,
                   help="projection sparsity (default: K for iht/cosamp/grasp, 9K otherwise)")
    p.add_argument("--m", type=int, default=S, help="update frequency (default 3n)")
    p.add_argument("--stages", "--S", dest="stages", type=int, default=S,
                   help="stage budget for ht-svrg (default 10000)")
    p.add_argument("--eta", type=float, default=S,
                   help="step size (default: solver heuristic)")
    p.add_argument("--omega", type=float, default=S, help="l2 radius (default inf)")
    p.add_argument("--trials", type=int, default=S, help="trial count (default 100)")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=S)
    p.add_argument("--design", default=S, choices=("gaussian", "rademacher", "orthonormal"))
    p.add_argument("--success-tol", dest="success_tol", type=float, default=S,
                   help="relative-error success threshold (default 1e-3)")
    p.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, default=S, help="parallel trial workers")
    p.add_argument("--max-iters", dest="max_iters", type=int, default=S,
                   help="batch-solver iteration budget (default 2000)")
    p.add_argument("--tol-residual", dest="tol_residual", type=float, default=S)
    p.add_argument("--saga-steps", dest="saga_steps", type=int, default=S)
    p.add_argument("--full-scale", dest="full_scale", action="store_true",
                   default=S, help="1000-trial run")
    add_common(p)

    p = sub.add_parser("sweep", help="success-rate grid over (n, K)")
    p.add_argument("--solver", default=S, choices=SOLVER_NAMES)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--n-grid", dest="n_grid", default=S,
                   help="grid as start:stop:step or comma list (default 16:256:16)")
    p.add_argument("--K-grid", dest="K_grid", default=S,
                   help="grid (default 1:25:4)")
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--jobs", type=int, default=S)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--stages", type=int, default=S)
    p.add_argument("--tol-residual", dest="tol_residual", type=float, default=S)
    p.add_argument("--full-scale", dest="full_scale", action="store_true", default=S)
    add_common(p)

    p = sub.add_parser("min-measurements",
                       help="smallest n reaching a target success rate")
    p.add_argument("--solver", default=S, choices=SOLVER_NAMES)
    p.add_argument("--K-list", dest="K_list", default=S,
                   help="sparsities to probe (default 2,6,10,14,18)")
    p.add_argument("--target", type=int, default=S, choices=(95, 99))
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--coarse-step", dest="coarse_step", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--jobs", type=int, default=S)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--stages", type=int, default=S)
    p.add_argument("--tol-residual", dest="tol_residual", type=float, default=S)
    add_common(p)

    p = sub.add_parser("classify", help="pairwise digit classification tasks")
    p.add_argument("--images", default=S, help="IDX training images (may be .gz)")
    p.add_argument("--labels", default=S, help="IDX training labels")
    p.add_argument("--test-images", dest="test_images", default=S)
    p.add_argument("--test-labels", dest="test_labels", default=S)
    p.add_argument("--pairs", default=S, help="digit pairs like 0v9,1v7")
    p.add_argument("--k-list", dest="k_list", default=S)
    p.add_argument("--stages", type=int, default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    add_common(p)

    p = sub.add_parser("convergence", help="stage-convergence coefficients")
    p.add_argument("--corollary1", action="store_true", default=S,
                   help="fixed-rate regime: optimal nu at eta = L/5, beta = 0.8")
    p.add_argument("--c", type=float, default=S, help="condition number L/alpha")
    p.add_argument("--eta-frac", dest="eta_frac", type=float, default=S,
                   help="eta as a fraction of 1/L (fixed-rate regime: 0.2)")
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--L", type=float, default=S)
    p.add_argument("--m", type=float, default=S)
    p.add_argument("--nu", type=float, default=S)
    p.add_argument("--omega", type=float, default=S)
    p.add_argument("--T", type=float, default=S)
    add_common(p)

    return parser


_COMMANDS = {
    "bound": cmd_bound,
    "recover": cmd_recover,
    "sweep": cmd_sweep,
    "min-measurements": cmd_min_measurements,
    "classify": cmd_classify,
    "convergence": cmd_convergence,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        params = _merge_params(args.command, args)
        if args.command == "bound":
            for key in ("k", "K", "d"):
                if key not in params or params[key] is None:
                    raise UsageError(f"--{key} is required")
        return _COMMANDS[args.command](params)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def console_entry() -> None:
    sys.exit(main())
