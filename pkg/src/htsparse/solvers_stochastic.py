"""Stochastic hard-thresholding solvers: variance-reduced SVRG and SAGA variants.

Both keep every iterate k-sparse via a hard-thresholding step; the SVRG
variant additionally projects onto an l2 ball of radius omega.  Randomness
comes from counter-based generators seeded from the config, with the inner
index draws and the stage-snapshot draws on disjoint streams so that the
snapshot choice does not move when the update frequency changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import expit

from . import _kernels
from .objectives import (
    ObjectiveModel,
    RegularizedLeastSquares,
    RegularizedLogistic,
    estimate_restricted_curvature,
    heuristic_step_size,
)
from .solvers_batch import DIVERGENCE_LIMIT, SolverReport
from .thresholding import _ht

__all__ = ["SvrgConfig", "SagaConfig", "SagaState", "ht_svrg", "ht_saga"]


def _philox(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream])))


@dataclass
class SvrgConfig:
    """Tunables of the variance-reduced stage solver.

    One stage = full-gradient snapshot + m stochastic hard-thresholded steps.
    ``snapshot_rule`` picks the next snapshot: "uniform_j" (an inner iterate
    at a uniformly drawn index, the analyzed rule) or "last_iterate".
    ``eta = None`` requests the 2/sigma_max(A A^T) heuristic.  ``tol_objective``
    and ``tol_change`` allow early stage-level stops; ``validate_iterates``
    asserts the sparsity/ball invariants every inner step (test builds).
    """

    S: int
    m: int
    k: int
    eta: Optional[float] = None
    omega: float = math.inf
    rng_seed: int = 0
    snapshot_rule: str = "uniform_j"
    record_stage_objectives: bool = True
    x0: Optional[np.ndarray] = None
    tol_objective: float = 0.0
    tol_change: float = 0.0
    validate_iterates: bool = False

    def __post_init__(self):
        if self.S < 1 or self.m < 1:
            raise ValueError("S and m must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive when set")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.snapshot_rule not in ("uniform_j", "last_iterate"):
            raise ValueError("snapshot_rule must be 'uniform_j' or 'last_iterate'")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be nonnegative")


def _project_ball_inplace_ok(x: np.ndarray, omega: float) -> np.ndarray:
    nrm = float(np.linalg.norm(x))
    if nrm <= omega:
        return x
    return x * (omega / nrm)


def ht_svrg(model: ObjectiveModel, config: SvrgConfig) -> SolverReport:
    """Variance-reduced stochastic descent with per-step hard thresholding.

    Stage s: snapshot x~ with full gradient mu; then m steps of
    b = x - eta (grad f_i(x) - grad f_i(x~) + mu), x = Pi_omega(H_k(b)) with
    i uniform.  The next snapshot is the inner iterate at a uniform index
    drawn at stage start (captured in flight, O(d) memory).  Stops at S
    stages, at the objective/change tolerances, or on divergence (objective
    beyond 1e120 or non-finite iterates, expected for very large steps).
    """
    n, d = model.n, model.d
    eta = config.eta
    if eta is None:
        problem = getattr(model, "problem", None)
        if problem is None:
            raise ValueError("eta is required for models without a design matrix")
        eta = heuristic_step_size(problem)

    if config.x0 is None:
        x_tilde = np.zeros(d)
    else:
        x0 = np.asarray(config.x0, dtype=float)
        if x0.shape != (d,):
            raise ValueError(f"x0 must have shape ({d},)")
        x_tilde = _project_ball_inplace_ok(_ht(x0, config.k), config.omega)

    idx_rng = _philox(config.rng_seed, 0)
    j_rng = _philox(config.rng_seed, 1)
    k, m, omega = config.k, config.m, config.omega
    finite_omega = math.isfinite(omega)

    # Compiled stage kernels for the built-in models; the interpreted loop
    # below handles everything else (and validated test builds).
    kernel = None
    if _kernels.AVAILABLE and not config.validate_iterates:
        if isinstance(model, RegularizedLeastSquares):
            kernel = "ls"
        elif isinstance(model, RegularizedLogistic):
            kernel = "logistic"

    obj_trace: List[float] = []
    stop_reason = "max_iters"
    converged = False
    stages = 0
    diverged = False
    for s in range(1, config.S + 1):
        mu = model.full_gradient(x_tilde)
        j_s = int(j_rng.integers(m))
        idx = idx_rng.integers(n, size=m)
        if kernel == "ls":
            c2 = model.problem.A @ x_tilde
            x, captured, captured_ok, diverged = _kernels.svrg_stage_ls(
                model.problem.A, x_tilde, c2, eta * mu, eta, model.gamma,
                k, omega, j_s, idx)
            if not captured_ok:
                captured = x_tilde
        elif kernel == "logistic":
            y = model.problem.y
            c2 = -2.0 * y * expit(-2.0 * y * (model.problem.A @ x_tilde))
            x, captured, captured_ok, diverged = _kernels.svrg_stage_logistic(
                model.problem.A, y, x_tilde, c2, eta * mu, eta, model.gamma,
                k, omega, j_s, idx)
            if not captured_ok:
                captured = x_tilde
        else:
            captured = x_tilde.copy() if j_s == 0 else None
            x = x_tilde.copy()
            for t in range(1, m + 1):
                i = int(idx[t - 1])
                g_new = model.sample_gradient(i, x)
                g_old = model.sample_gradient(i, x_tilde)
                b = x - eta * (g_new - g_old + mu)
                if not np.all(np.isfinite(b)):
                    diverged = True
                    break
                x = _ht(b, k)
                if finite_omega:
                    x = _project_ball_inplace_ok(x, omega)
                if config.validate_iterates:
                    assert np.count_nonzero(x) <= k
                    assert np.linalg.norm(x) <= omega * (1.0 + 1e-12)
                if t == j_s:
                    captured = x.copy()
        stages = s
        if diverged:
            stop_reason = "diverged"
            break
        previous = x_tilde
        x_tilde = captured if config.snapshot_rule == "uniform_j" else x
        obj = model.value(x_tilde)
        if config.record_stage_objectives:
            obj_trace.append(obj)
        if not math.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            stop_reason = "diverged"
            break
        if config.tol_objective and obj <= config.tol_objective:
            stop_reason = "tol_residual"
            converged = True
            break
        if config.tol_change and float(np.linalg.norm(x_tilde - previous)) <= config.tol_change:
            stop_reason = "tol_change"
            converged = True
            break
    return SolverReport(x_final=x_tilde, iterations_run=stages,
                        objective_trace=obj_trace, residual_trace=[],
                        converged=converged, stop_reason=stop_reason,
                        warnings=[])


@dataclass
class SagaConfig:
    """Tunables of the stored-gradient-table solver.

    ``eta = None`` derives the step 1/(2 (alpha n + L)) from estimated
    restricted curvature.  The objective is recorded (and tolerance-checked)
    every ``record_every`` steps, defaulting to once per n steps.
    """

    k: int
    max_steps: int
    eta: Optional[float] = None
    rng_seed: int = 0
    x0: Optional[np.ndarray] = None
    tol_objective: float = 0.0
    record_every: int = 0
    validate_iterates: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive when set")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be nonnegative")
        if self.record_every < 0:
            raise ValueError("record_every must be nonnegative")


@dataclass
class SagaState:
    """Stored per-sample gradients, their running mean, and the iterate."""

    gradient_table: np.ndarray
    table_average: np.ndarray
    x: np.ndarray

    def average_drift(self) -> float:
        """Relative gap between the running mean and a fresh recompute."""
        fresh = self.gradient_table.mean(axis=0)
        scale = float(np.linalg.norm(fresh))
        return float(np.linalg.norm(self.table_average - fresh)) / max(scale, 1e-300)


def default_saga_step_size(model: ObjectiveModel, k: int,
                           rng_seed: int = 0) -> float:
    """Step 1/(2 (alpha n + L)) from estimated restricted curvature.

    alpha is the aggregate-objective curvature, L the per-sample smoothness.
    For the least-squares model the curvature probes are on the design scale
    A_S^T A_S, so alpha n is (alpha_hat - gamma) + gamma n.
    """
    r = min(3 * k, model.d)
    est = estimate_restricted_curvature(model, r=r, num_probes=20, rng_seed=rng_seed)
    gamma = getattr(model, "gamma", 0.0)
    if isinstance(model, RegularizedLeastSquares):
        alpha_n = (est.alpha_hat - gamma) + gamma * model.n
    else:
        alpha_n = est.alpha_hat * model.n
    denom = 2.0 * (alpha_n + est.L_hat)
    if not denom > 0:
        raise ValueError("curvature estimate collapsed; supply eta explicitly")
    return 1.0 / denom


def ht_saga(model: ObjectiveModel, config: SagaConfig, return_state: bool = False):
    """Incremental gradient descent with a stored table and hard thresholding.

    Per step: draw j uniformly, form b = x - eta (grad f_j(x) - table_j +
    mean(table)), hard-threshold to k entries, then replace table_j with
    grad f_j evaluated at the pre-update iterate and refresh the mean
    incrementally.  ``return_state`` additionally hands back the final
    gradient table for bookkeeping checks.
    """
    n, d = model.n, model.d
    eta = config.eta if config.eta is not None else default_saga_step_size(
        model, config.k, config.rng_seed)

    if config.x0 is None:
        x = np.zeros(d)
    else:
        x0 = np.asarray(config.x0, dtype=float)
        if x0.shape != (d,):
            raise ValueError(f"x0 must have shape ({d},)")
        x = _ht(x0, config.k)

    table = np.empty((n, d))
    for i in range(n):
        table[i] = model.sample_gradient(i, x)
    avg = table.mean(axis=0)

    rng = _philox(config.rng_seed, 2)
    record_every = config.record_every if config.record_every else n
    obj_trace: List[float] = []
    stop_reason = "max_iters"
    converged = False
    steps = 0
    for t in range(1, config.max_steps + 1):
        steps = t
        j = int(rng.integers(n))
        g_new = model.sample_gradient(j, x)
        b = x - eta * (g_new - table[j] + avg)
        if not np.all(np.isfinite(b)):
            stop_reason = "diverged"
            break
        avg = avg + (g_new - table[j]) / n
        table[j] = g_new
        x = _ht(b, config.k)
        if config.validate_iterates:
            assert np.count_nonzero(x) <= config.k
        if t % record_every == 0 or t == config.max_steps:
            obj = model.value(x)
            obj_trace.append(obj)
            if not math.isfinite(obj) or obj > DIVERGENCE_LIMIT:
                stop_reason = "diverged"
                break
            if config.tol_objective and obj <= config.tol_objective:
                stop_reason = "tol_residual"
                converged = True
                break
    report = SolverReport(x_final=x, iterations_run=steps,
                          objective_trace=obj_trace, residual_trace=[],
                          converged=converged, stop_reason=stop_reason,
                          warnings=[])
    if return_state:
        return report, SagaState(gradient_table=table, table_average=avg, x=x)
    return report
