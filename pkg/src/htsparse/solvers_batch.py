"""Full-gradient hard-thresholding solvers: IHT, PGD, CoSaMP and GraSP.

All four share the same stopping contract: stop when the measurement
residual falls to ``tol_residual``, when the iterate moves less than
``tol_change``, at ``max_iters``, or when the objective blows past the
divergence guard (1e120).  Runs are deterministic given identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .objectives import (
    ObjectiveModel,
    RegularizedLeastSquares,
    SensingProblem,
    heuristic_step_size,
)
from .thresholding import _ht, _top_k

__all__ = ["DIVERGENCE_LIMIT", "SolverConfig", "SolverReport",
           "iht", "pgd", "cosamp", "grasp"]

#: Objective value beyond which a run is declared diverged.
DIVERGENCE_LIMIT = 1e120


@dataclass
class SolverConfig:
    """Tunables shared by the batch solvers.

    ``eta = None`` means "use the solver's default step": 1 for plain IHT,
    2/sigma_max(A A^T) elsewhere; an explicit 0 is honored as a zero step.
    ``omega``, when set, adds an l2-ball projection after thresholding
    (PGD/GraSP only).  ``x0`` overrides the zero initializer.
    """

    k: int
    eta: Optional[float] = None
    max_iters: int = 500
    tol_residual: float = 0.0
    tol_change: float = 0.0
    omega: Optional[float] = None
    rng_seed: int = 0
    record_trace: bool = True
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be nonnegative when set")
        if self.tol_residual < 0 or self.tol_change < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.omega is not None and not self.omega > 0:
            raise ValueError("omega must be positive when set")


@dataclass
class SolverReport:
    """Outcome of one solver run.

    ``stop_reason`` is one of "tol_residual", "tol_change", "max_iters",
    "diverged"; ``converged`` is true for the two tolerance stops.  Traces
    (one entry per iteration run) are populated when ``record_trace`` is on;
    ``residual_trace`` stays empty for objectives without a measurement
    residual.  ``warnings`` collects non-fatal flags such as rank-deficient
    restricted solves or an inner solver hitting its cap.
    """

    x_final: np.ndarray
    iterations_run: int
    objective_trace: List[float]
    residual_trace: List[float]
    converged: bool
    stop_reason: str
    warnings: List[str] = field(default_factory=list)


def _initial_iterate(config: SolverConfig, d: int) -> np.ndarray:
    if config.x0 is None:
        return np.zeros(d)
    x0 = np.asarray(config.x0, dtype=float)
    if x0.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},)")
    return x0.copy()


def _ball(x: np.ndarray, omega: Optional[float]) -> np.ndarray:
    if omega is None or not math.isfinite(omega):
        return x
    nrm = float(np.linalg.norm(x))
    if nrm <= omega:
        return x
    return x * (omega / nrm)


def _thresholded_descent(problem: SensingProblem, config: SolverConfig,
                         eta: float, use_ball: bool) -> SolverReport:
    """Shared iteration x <- H_k(x + eta A^T (y - A x)) on the squared residual."""
    A, y = problem.A, problem.y
    k = config.k
    x = _initial_iterate(config, problem.d)
    residual = y - A @ x
    obj_trace: List[float] = []
    res_trace: List[float] = []
    warnings: List[str] = []
    stop_reason = "max_iters"
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        b = x + eta * (A.T @ residual)
        if not np.all(np.isfinite(b)):
            stop_reason = "diverged"
            it -= 1
            break
        x_new = _ht(b, k)
        if use_ball:
            x_new = _ball(x_new, config.omega)
        residual = y - A @ x_new
        rnorm = float(np.linalg.norm(residual))
        obj = 0.5 * rnorm * rnorm
        if config.record_trace:
            obj_trace.append(obj)
            res_trace.append(rnorm)
        if not math.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            x = x_new
            stop_reason = "diverged"
            break
        if rnorm <= config.tol_residual:
            x = x_new
            stop_reason = "tol_residual"
            converged = True
            break
        if float(np.linalg.norm(x_new - x)) <= config.tol_change:
            x = x_new
            stop_reason = "tol_change"
            converged = True
            break
        x = x_new
    return SolverReport(x_final=x, iterations_run=it, objective_trace=obj_trace,
                        residual_trace=res_trace, converged=converged,
                        stop_reason=stop_reason, warnings=warnings)


def iht(problem: SensingProblem, config: SolverConfig) -> SolverReport:
    """Iterative hard thresholding: x <- H_k(x + eta A^T (y - A x)).

    ``eta = 0`` selects the classic unit step.
    """
    eta = config.eta if config.eta is not None else 1.0
    return _thresholded_descent(problem, config, eta, use_ball=False)


def pgd(model_or_problem: Union[ObjectiveModel, SensingProblem],
        config: SolverConfig) -> SolverReport:
    """Projected gradient descent with a top-k projection (and optional ball).

    Given a measurement problem, this runs the same squared-residual update
    as :func:`iht` (so pgd with eta = 1 and no ball reproduces iht exactly)
    but defaults eta to 2/sigma_max(A A^T).  Given a generic objective model,
    the update is x <- H_k(x - eta grad F(x)).
    """
    if isinstance(model_or_problem, SensingProblem):
        problem = model_or_problem
        eta = config.eta if config.eta is not None else heuristic_step_size(problem)
        return _thresholded_descent(problem, config, eta, use_ball=True)
    model = model_or_problem
    eta = config.eta if config.eta is not None else heuristic_step_size(model.problem)

    x = _initial_iterate(config, model.d)
    obj_trace: List[float] = []
    res_trace: List[float] = []
    stop_reason = "max_iters"
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        b = x - eta * model.full_gradient(x)
        if not np.all(np.isfinite(b)):
            stop_reason = "diverged"
            it -= 1
            break
        x_new = _ball(_ht(b, config.k), config.omega)
        obj = model.value(x_new)
        rnorm = model.residual_norm(x_new)
        if config.record_trace:
            obj_trace.append(obj)
            if rnorm is not None:
                res_trace.append(rnorm)
        if not math.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            x = x_new
            stop_reason = "diverged"
            break
        if rnorm is not None and rnorm <= config.tol_residual:
            x = x_new
            stop_reason = "tol_residual"
            converged = True
            break
        if float(np.linalg.norm(x_new - x)) <= config.tol_change:
            x = x_new
            stop_reason = "tol_change"
            converged = True
            break
        x = x_new
    return SolverReport(x_final=x, iterations_run=it, objective_trace=obj_trace,
                        residual_trace=res_trace, converged=converged,
                        stop_reason=stop_reason, warnings=[])


def _candidate_support(score: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    """Top-2k entries of |score| merged with the current support (sorted)."""
    d = score.size
    cand = _top_k(np.abs(score), min(2 * k, d))
    return np.union1d(cand, np.flatnonzero(x))


def cosamp(problem: SensingProblem, config: SolverConfig) -> SolverReport:
    """Prune-merge-solve recovery: restricted least squares on <=3k candidates.

    Per iteration the residual proxy g = A^T (y - A x) proposes 2k new
    coordinates; a least-squares solve restricted to the merged candidate set
    is then hard-thresholded to k entries.  Rank-deficient restricted systems
    fall back to the minimum-norm solution and are flagged.
    """
    A, y = problem.A, problem.y
    k = config.k
    x = _initial_iterate(config, problem.d)
    obj_trace: List[float] = []
    res_trace: List[float] = []
    warnings: List[str] = []
    stop_reason = "max_iters"
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        g = A.T @ (y - A @ x)
        if not np.all(np.isfinite(g)):
            stop_reason = "diverged"
            it -= 1
            break
        cand = _candidate_support(g, x, k)
        z, _, rank, _ = np.linalg.lstsq(A[:, cand], y, rcond=None)
        if rank < cand.size and "rank_deficient_lstsq" not in warnings:
            warnings.append("rank_deficient_lstsq")
        full = np.zeros(problem.d)
        full[cand] = z
        x_new = _ht(full, k)
        residual = y - A @ x_new
        rnorm = float(np.linalg.norm(residual))
        obj = 0.5 * rnorm * rnorm
        if config.record_trace:
            obj_trace.append(obj)
            res_trace.append(rnorm)
        if not math.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            x = x_new
            stop_reason = "diverged"
            break
        if rnorm <= config.tol_residual:
            x = x_new
            stop_reason = "tol_residual"
            converged = True
            break
        if float(np.linalg.norm(x_new - x)) <= config.tol_change:
            x = x_new
            stop_reason = "tol_change"
            converged = True
            break
        x = x_new
    return SolverReport(x_final=x, iterations_run=it, objective_trace=obj_trace,
                        residual_trace=res_trace, converged=converged,
                        stop_reason=stop_reason, warnings=warnings)


def _restricted_minimize(model: ObjectiveModel, cand: np.ndarray,
                         x_start: np.ndarray, tol: float = 1e-8,
                         max_steps: int = 500):
    """Minimize the objective over vectors supported on ``cand``.

    Least squares is solved exactly; anything else runs projected gradient
    descent with backtracking until the restricted gradient norm reaches
    ``tol`` (capped at ``max_steps``).  Returns (solution, hit_cap).
    """
    if isinstance(model, RegularizedLeastSquares):
        A, y = model.problem.A, model.problem.y
        A_c = A[:, cand]
        if model.gamma == 0.0:
            z = np.linalg.lstsq(A_c, y, rcond=None)[0]
        else:
            n = model.n
            top = A_c / math.sqrt(n)
            bottom = math.sqrt(model.gamma) * np.eye(cand.size)
            rhs = np.concatenate([y / math.sqrt(n), np.zeros(cand.size)])
            z = np.linalg.lstsq(np.vstack([top, bottom]), rhs, rcond=None)[0]
        out = np.zeros(model.d)
        out[cand] = z
        return out, False

    z = np.zeros(model.d)
    z[cand] = x_start[cand]
    step = 1.0
    for _ in range(max_steps):
        g = model.full_gradient(z)
        g_r = np.zeros(model.d)
        g_r[cand] = g[cand]
        gnorm_sq = float(g_r @ g_r)
        if math.sqrt(gnorm_sq) <= tol:
            return z, False
        f0 = model.value(z)
        while step > 1e-18:
            trial = z - step * g_r
            if model.value(trial) <= f0 - 1e-4 * step * gnorm_sq:
                break
            step *= 0.5
        z = z - step * g_r
        step = min(step * 2.0, 1e6)
    return z, True


def grasp(model: ObjectiveModel, config: SolverConfig) -> SolverReport:
    """Gradient support pursuit for generic objectives.

    Per iteration: merge the 2k largest gradient coordinates with the current
    support, minimize the objective restricted to that candidate set (exact
    for least squares, restricted descent otherwise), hard-threshold to k and
    optionally project onto the omega ball.  An inner solver hitting its step
    cap is a warning, not an error.
    """
    x = _initial_iterate(config, model.d)
    obj_trace: List[float] = []
    res_trace: List[float] = []
    warnings: List[str] = []
    stop_reason = "max_iters"
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        g = model.full_gradient(x)
        if not np.all(np.isfinite(g)):
            stop_reason = "diverged"
            it -= 1
            break
        cand = _candidate_support(g, x, config.k)
        inner, hit_cap = _restricted_minimize(model, cand, x)
        if hit_cap and "inner_cap_hit" not in warnings:
            warnings.append("inner_cap_hit")
        x_new = _ball(_ht(inner, config.k), config.omega)
        obj = model.value(x_new)
        rnorm = model.residual_norm(x_new)
        if config.record_trace:
            obj_trace.append(obj)
            if rnorm is not None:
                res_trace.append(rnorm)
        if not math.isfinite(obj) or obj > DIVERGENCE_LIMIT:
            x = x_new
            stop_reason = "diverged"
            break
        if rnorm is not None and rnorm <= config.tol_residual:
            x = x_new
            stop_reason = "tol_residual"
            converged = True
            break
        if float(np.linalg.norm(x_new - x)) <= config.tol_change:
            x = x_new
            stop_reason = "tol_change"
            converged = True
            break
        x = x_new
    return SolverReport(x_final=x, iterations_run=it, objective_trace=obj_trace,
                        residual_trace=res_trace, converged=converged,
                        stop_reason=stop_reason, warnings=warnings)
