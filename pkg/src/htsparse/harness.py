"""Experiment harness: problem generation, trial batches, sweeps, MNIST tasks.

Seed discipline: a batch with master seed ``s`` gives trial ``i`` the seed
``s * 1_000_003 + i``, used both for problem generation and for the solver's
own randomness.  Re-running a single trial with its recorded seed reproduces
its batch outcome exactly, and aggregation is order-independent, so trials
may run concurrently.
"""

from __future__ import annotations

import dataclasses
import gzip
import hashlib
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .objectives import (
    RegularizedLeastSquares,
    RegularizedLogistic,
    SensingProblem,
    heuristic_step_size,
)
from .solvers_batch import SolverConfig, SolverReport, cosamp, grasp, iht, pgd
from .solvers_stochastic import SagaConfig, SvrgConfig, ht_saga, ht_svrg

__all__ = [
    "Scenario",
    "TrialBatchResult",
    "MnistDataset",
    "IdxParseError",
    "SOLVER_NAMES",
    "generate_sensing_problem",
    "trial_seed",
    "matched_batch_iterations",
    "run_trials",
    "sweep_phase_diagram",
    "MinMeasurementsResult",
    "min_measurements_search",
    "LineFit",
    "fit_measurement_line",
    "load_mnist_idx",
    "pairwise_task",
    "ClassificationRun",
    "classify_experiment",
    "write_results",
    "read_results",
]

SOLVER_NAMES = ("iht", "pgd", "cosamp", "grasp", "ht-svrg", "ht-saga")

CSV_SCHEMA_VERSION = "htsparse.trials.v1"
CSV_COLUMNS = ("n", "K", "k", "solver", "trials", "successes", "success_rate",
               "mean_rel_error", "seed")


@dataclass(frozen=True)
class Scenario:
    """Synthetic problem family for randomized trials."""

    n: int
    d: int
    K: int
    noise_sigma: float = 0.0
    design: str = "gaussian"


@dataclass
class TrialBatchResult:
    """Aggregate outcome of repeated randomized recovery trials."""

    solver: str
    n: int
    K: int
    k: int
    trials: int
    successes: int
    success_rate: float
    mean_rel_error: float
    master_seed: int
    per_trial_seeds: List[int]
    config_digest: str


def generate_sensing_problem(n: int, d: int, K: int, noise_sigma: float = 0.0,
                             design: str = "gaussian",
                             rng_seed: int = 0) -> SensingProblem:
    """Random design with variance-1/n entries and a K-sparse planted signal.

    Designs: "gaussian" (N(0, 1/n) entries), "rademacher" (+-1/sqrt(n)),
    "orthonormal" (QR of a square Gaussian, n = d only).  The signal support
    is uniform over the d coordinates and the nonzero amplitudes are standard
    normal; measurements get N(0, noise_sigma^2) noise added.
    """
    if not 1 <= K <= d:
        raise ValueError(f"need 1 <= K <= d, got K={K}, d={d}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    if design == "gaussian":
        A = rng.normal(scale=1.0 / math.sqrt(n), size=(n, d))
    elif design == "rademacher":
        A = rng.choice((-1.0, 1.0), size=(n, d)) / math.sqrt(n)
    elif design == "orthonormal":
        if n != d:
            raise ValueError("orthonormal design requires n = d")
        A = np.linalg.qr(rng.normal(size=(n, d)))[0]
    else:
        raise ValueError(f"unknown design {design!r}")
    support = rng.choice(d, size=K, replace=False)
    x_true = np.zeros(d)
    x_true[support] = rng.normal(size=K)
    y = A @ x_true
    if noise_sigma > 0:
        y = y + noise_sigma * rng.normal(size=n)
    return SensingProblem(A=A, y=y, x_true=x_true, noise_sigma=noise_sigma)


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Deterministic per-trial seed: master_seed * 1_000_003 + trial_index."""
    return int(master_seed) * 1_000_003 + int(trial_index)


def matched_batch_iterations(m: int, n: int, S: int) -> int:
    """Full-gradient-equivalent budget (2m/n + 1) S granted to batch solvers."""
    return int(math.ceil((2.0 * m / n + 1.0) * S))


def _config_digest(solver: str, config, scenario: Scenario, trials: int,
                   success_tol: float, master_seed: int) -> str:
    payload = {
        "solver": solver,
        "config": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                   for k, v in dataclasses.asdict(config).items()},
        "scenario": dataclasses.asdict(scenario),
        "trials": trials,
        "success_tol": success_tol,
        "master_seed": master_seed,
    }
    blob = json.dumps(payload, sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _solve(solver: str, problem: SensingProblem, config) -> SolverReport:
    if solver == "iht":
        return iht(problem, config)
    if solver == "pgd":
        return pgd(problem, config)
    if solver == "cosamp":
        return cosamp(problem, config)
    if solver == "grasp":
        return grasp(RegularizedLeastSquares(problem, gamma=0.0), config)
    if solver == "ht-svrg":
        return ht_svrg(RegularizedLeastSquares(problem, gamma=0.0), config)
    if solver == "ht-saga":
        return ht_saga(RegularizedLeastSquares(problem, gamma=0.0), config)
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVER_NAMES}")


def _run_one_trial(args) -> Tuple[int, float]:
    solver, config, scenario, seed = args
    problem = generate_sensing_problem(
        scenario.n, scenario.d, scenario.K, scenario.noise_sigma,
        scenario.design, rng_seed=seed)
    config = dataclasses.replace(config, rng_seed=seed)
    report = _solve(solver, problem, config)
    err = np.linalg.norm(report.x_final - problem.x_true)
    rel = float(err / np.linalg.norm(problem.x_true))
    if not math.isfinite(rel):
        rel = math.inf
    return seed, rel


def run_trials(solver: str, config, scenario: Scenario, trials: int,
               success_tol: float = 1e-3, master_seed: int = 0,
               jobs: int = 1) -> TrialBatchResult:
    """Run seeded recovery trials and aggregate the success statistics.

    A trial succeeds when the relative l2 error of the returned iterate is
    below ``success_tol``; diverged runs simply count as failures.  With
    ``jobs > 1`` trials execute in parallel processes; per-trial seeding makes
    the aggregate independent of execution order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if solver not in SOLVER_NAMES:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVER_NAMES}")
    seeds = [trial_seed(master_seed, i) for i in range(trials)]
    tasks = [(solver, config, scenario, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one_trial, tasks))
    else:
        outcomes = [_run_one_trial(t) for t in tasks]
    outcomes.sort(key=lambda pair: seeds.index(pair[0]))
    rel_errors = np.array([rel for _, rel in outcomes])
    successes = int(np.sum(rel_errors < success_tol))
    finite = rel_errors[np.isfinite(rel_errors)]
    mean_rel = float(finite.mean()) if finite.size else math.inf
    return TrialBatchResult(
        solver=solver,
        n=scenario.n, K=scenario.K, k=config.k,
        trials=trials, successes=successes,
        success_rate=100.0 * successes / trials,
        mean_rel_error=mean_rel,
        master_seed=master_seed,
        per_trial_seeds=seeds,
        config_digest=_config_digest(solver, config, scenario, trials,
                                     success_tol, master_seed),
    )


def sweep_phase_diagram(solver: str, config_for_cell, n_grid: Sequence[int],
                        K_grid: Sequence[int], d: int, trials: int,
                        noise_sigma: float = 0.0, design: str = "gaussian",
                        success_tol: float = 1e-3, master_seed: int = 0,
                        jobs: int = 1) -> List[TrialBatchResult]:
    """Success-rate grid over (n, K) cells.

    ``config_for_cell(n, K)`` supplies the solver config per cell (so budgets
    can be matched across solvers).  Returns one result per cell, row-major
    in (n, K) order; per-cell solver failures are data, never exceptions.
    """
    if not n_grid or not K_grid:
        raise ValueError("grids must be nonempty")
    results = []
    for n in n_grid:
        for K in K_grid:
            scenario = Scenario(n=int(n), d=int(d), K=int(K),
                                noise_sigma=noise_sigma, design=design)
            config = config_for_cell(int(n), int(K))
            results.append(run_trials(solver, config, scenario, trials,
                                      success_tol=success_tol,
                                      master_seed=master_seed, jobs=jobs))
    return results


class MinMeasurementsResult(NamedTuple):
    K: int
    n: int
    rate_at_n: float
    capped: bool


def min_measurements_search(solver: str, config_for_cell, K: int,
                            target_rate: float, d: int, trials: int,
                            coarse_step: int = 8, success_tol: float = 1e-3,
                            master_seed: int = 0, jobs: int = 1) -> MinMeasurementsResult:
    """Smallest n reaching the target success percentage for sparsity K.

    Coarse upward scan (step ``coarse_step``) finds the first n with >= 90%
    success, then n moves in steps of one until the target is met while n-1
    is not, all on the same per-trial seed set.  If even n = d misses the
    target, d is returned with the ``capped`` flag set.
    """
    if target_rate not in (95, 99):
        raise ValueError("target_rate must be 95 or 99")

    def rate(n: int) -> float:
        scenario = Scenario(n=n, d=d, K=K)
        result = run_trials(solver, config_for_cell(n, K), scenario, trials,
                            success_tol=success_tol, master_seed=master_seed,
                            jobs=jobs)
        return result.success_rate

    rate_at_d = rate(d)
    if rate_at_d < target_rate:
        return MinMeasurementsResult(K=K, n=d, rate_at_n=rate_at_d, capped=True)

    n0 = None
    for n in range(coarse_step, d + 1, coarse_step):
        if rate(n) >= 90.0:
            n0 = n
            break
    if n0 is None:
        n0 = d

    r = rate(n0)
    if r >= target_rate:
        # walk down to the smallest passing n
        n = n0
        while n > 1:
            r_prev = rate(n - 1)
            if r_prev < target_rate:
                return MinMeasurementsResult(K=K, n=n, rate_at_n=r, capped=False)
            n -= 1
            r = r_prev
        return MinMeasurementsResult(K=K, n=n, rate_at_n=r, capped=False)
    n = n0
    while n < d:
        n += 1
        r = rate(n)
        if r >= target_rate:
            return MinMeasurementsResult(K=K, n=n, rate_at_n=r, capped=False)
    return MinMeasurementsResult(K=K, n=d, rate_at_n=rate_at_d, capped=False)


class LineFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def fit_measurement_line(K_values: Sequence[int], n_values: Sequence[int]) -> LineFit:
    """Least-squares line n ~ a K + b through the measured minima, with R^2."""
    K_arr = np.asarray(K_values, dtype=float)
    n_arr = np.asarray(n_values, dtype=float)
    if K_arr.size != n_arr.size or K_arr.size < 2:
        raise ValueError("need at least two (K, n) pairs")
    slope, intercept = np.polyfit(K_arr, n_arr, 1)
    fitted = slope * K_arr + intercept
    ss_res = float(np.sum((n_arr - fitted) ** 2))
    ss_tot = float(np.sum((n_arr - n_arr.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LineFit(slope=float(slope), intercept=float(intercept), r_squared=r2)


# ---------------------------------------------------------------------------
# MNIST ingestion and pairwise classification tasks
# ---------------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxParseError(ValueError):
    """Malformed IDX file: bad magic, truncation, or count mismatch."""


@dataclass
class MnistDataset:
    """Flattened image dataset: n x 784 pixels in [0, 1] plus digit labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise IdxParseError(
            f"truncated IDX file while reading {what}: "
            f"expected {count} bytes, got {len(data)} (missing {count - len(data)})")
    return data


def _open_maybe_gzip(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_mnist_idx(images_path, labels_path, split: Optional[str] = None) -> MnistDataset:
    """Parse big-endian IDX image/label files (optionally gzipped).

    Image files carry magic 0x00000803 and three dimensions, label files
    0x00000801 and one dimension; pixel bytes are scaled by 1/255.  The item
    counts of the two files must agree.
    """
    with _open_maybe_gzip(images_path) as fh:
        magic, n_images, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxParseError(
                f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        pixels = _read_exact(fh, n_images * rows * cols, "pixel data")
    with _open_maybe_gzip(labels_path) as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxParseError(
                f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        raw_labels = _read_exact(fh, n_labels, "label data")
    if n_images != n_labels:
        raise IdxParseError(
            f"count mismatch: {n_images} images vs {n_labels} labels")
    images = np.frombuffer(pixels, dtype=np.uint8).astype(float) / 255.0
    images = images.reshape(n_images, rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(int)
    if split is None:
        split = {60000: "train", 10000: "test"}.get(n_images, "custom")
    return MnistDataset(images=images, labels=labels, split=split)


def pairwise_task(dataset: MnistDataset, digit_a: int, digit_b: int) -> SensingProblem:
    """Binary task for two digits: the smaller digit is labeled +1.

    Features are the raw pixels; rows keep the dataset order of the two
    filtered classes.
    """
    if digit_a == digit_b:
        raise ValueError("digits must differ")
    lo, hi = min(digit_a, digit_b), max(digit_a, digit_b)
    mask = (dataset.labels == lo) | (dataset.labels == hi)
    X = dataset.images[mask]
    y = np.where(dataset.labels[mask] == lo, 1.0, -1.0)
    return SensingProblem(A=X, y=y)


@dataclass
class ClassificationRun:
    """Sparse logistic model trained at one sparsity level."""

    k: int
    test_accuracy: float
    train_accuracy: float
    stage_objectives: List[float]
    weights: np.ndarray


def _accuracy(task: SensingProblem, w: np.ndarray) -> float:
    scores = task.A @ w
    predicted = np.where(scores >= 0, 1.0, -1.0)
    return float(np.mean(predicted == task.y))


def classify_experiment(train: SensingProblem, test: SensingProblem,
                        k_list: Sequence[int], m: int = 0, gamma: float = 1e-5,
                        eta: Optional[float] = None, stages: int = 30,
                        omega: float = math.inf,
                        rng_seed: int = 0) -> List[ClassificationRun]:
    """Train the variance-reduced sparse logistic solver at several sparsities.

    Defaults follow the usual protocol: update frequency m = 3n, ridge
    gamma = 1e-5 and the 2/sigma_max(A A^T) heuristic step.  Each run reports
    train/test accuracy, the per-stage objective trace, and the k-sparse
    weight vector (for external visualization).
    """
    n = train.n
    m = m if m else 3 * n
    if eta is None:
        eta = heuristic_step_size(train)
    model = RegularizedLogistic(train, gamma=gamma)
    runs = []
    for k in k_list:
        config = SvrgConfig(S=stages, m=m, k=int(k), eta=eta, omega=omega,
                            rng_seed=rng_seed, record_stage_objectives=True)
        report = ht_svrg(model, config)
        runs.append(ClassificationRun(
            k=int(k),
            test_accuracy=_accuracy(test, report.x_final),
            train_accuracy=_accuracy(train, report.x_final),
            stage_objectives=list(report.objective_trace),
            weights=report.x_final,
        ))
    return runs


# ---------------------------------------------------------------------------
# Result persistence
# ---------------------------------------------------------------------------


def _result_row(result: TrialBatchResult) -> Dict[str, object]:
    return {
        "n": result.n,
        "K": result.K,
        "k": result.k,
        "solver": result.solver,
        "trials": result.trials,
        "successes": result.successes,
        "success_rate": result.success_rate,
        "mean_rel_error": result.mean_rel_error,
        "seed": result.master_seed,
    }


def write_results(results: Sequence[TrialBatchResult], path, fmt: str = "csv") -> None:
    """Persist trial batches with a stable column schema.

    CSV rows follow ``CSV_COLUMNS`` with a schema-version header comment;
    JSON mirrors the full result fields (including per-trial seeds).  Field
    order is deterministic so identical runs produce identical bytes.
    """
    if fmt == "csv":
        lines = [f"# schema: {CSV_SCHEMA_VERSION}", ",".join(CSV_COLUMNS)]
        for result in results:
            row = _result_row(result)
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float)
                                  else str(row[c]) for c in CSV_COLUMNS))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    elif fmt == "json":
        payload = {
            "schema": CSV_SCHEMA_VERSION,
            "results": [dict(_result_row(r),
                             per_trial_seeds=r.per_trial_seeds,
                             config_digest=r.config_digest)
                        for r in results],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r}; expected 'csv' or 'json'")


def read_results(path, fmt: str = "csv") -> List[Dict[str, object]]:
    """Read back rows written by :func:`write_results` (exact round trip)."""
    if fmt == "csv":
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        if not lines or not lines[0].startswith("# schema:"):
            raise ValueError("missing schema header")
        header = lines[1].split(",")
        rows = []
        for ln in lines[2:]:
            if not ln:
                continue
            values = ln.split(",")
            row: Dict[str, object] = {}
            for name, val in zip(header, values):
                if name == "solver":
                    row[name] = val
                elif name in ("success_rate", "mean_rel_error"):
                    row[name] = float(val)
                else:
                    row[name] = int(val)
            rows.append(row)
        return rows
    if fmt == "json":
        with open(path) as fh:
            payload = json.load(fh)
        return payload["results"]
    raise ValueError(f"unknown format {fmt!r}; expected 'csv' or 'json'")
