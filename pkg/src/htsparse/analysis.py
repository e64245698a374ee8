"""Closed-form convergence conditions and coefficients for thresholding solvers.

Everything here is a pure function of scalar inputs: isometry thresholds for
the classic batch solvers as a function of the expansion factor ``nu``,
the two-regime convergence coefficients of the variance-reduced stochastic
solver, the optimal ``nu`` choice, minimal update frequency, and the usual
sample-size heuristic n >= C0 delta^-2 r log(d/r).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

__all__ = [
    "rip_threshold_iht",
    "CappedThreshold",
    "rip_threshold_cosamp",
    "srh_threshold_grasp",
    "ConvergenceCoefficients",
    "beta_case1",
    "beta_case2",
    "svrg_kappa",
    "svrg_coefficients",
    "OptimalNu",
    "optimal_nu",
    "UpdateFrequencyBound",
    "min_update_frequency",
    "SampleSize",
    "sample_size_rip",
]


def rip_threshold_iht(nu: float) -> float:
    """Isometry constant delta_{2k+K} sufficient for geometric-rate recovery: 1/sqrt(8 nu)."""
    if nu < 1.0:
        raise ValueError("nu must be >= 1")
    return 1.0 / math.sqrt(8.0 * nu)


class CappedThreshold(NamedTuple):
    value: float
    capped: bool


def rip_threshold_cosamp(nu: float) -> CappedThreshold:
    """Isometry constant delta_{3k+K} sufficient for the prune-and-solve solver.

    Formula: sqrt(sqrt(32 nu + 49) - 9) / (4 sqrt(nu - 1)); equivalently the
    delta solving sqrt(2) delta sqrt((1 + (nu-1) delta^2)/(1 - delta^2)) = 1/2.
    Isometry constants live in [0, 1), so values above 1 are reported capped.
    """
    if not nu > 1.0:
        raise ValueError("nu must exceed 1")
    value = math.sqrt(math.sqrt(32.0 * nu + 49.0) - 9.0) / (4.0 * math.sqrt(nu - 1.0))
    if value > 1.0:
        return CappedThreshold(1.0, True)
    return CappedThreshold(value, False)


def srh_threshold_grasp(nu: float) -> float:
    """Restricted-Hessian condition bound mu_{3k+K} <= 1 + (sqrt(sqrt(nu)+1) - 1)/sqrt(nu)."""
    if nu < 1.0:
        raise ValueError("nu must be >= 1")
    root = math.sqrt(nu)
    return 1.0 + (math.sqrt(root + 1.0) - 1.0) / root


def beta_case1(eta: float, alpha: float, L: float, m: float, nu: float) -> float:
    """Convergence coefficient for the regime nu (1 - eta alpha) > 1."""
    denom = 2.0 * nu * eta * alpha - 2.0 * nu * eta * eta * alpha * L - nu + 1.0
    if denom <= 0.0:
        return math.inf
    return 1.0 / (denom * m) + 2.0 * nu * eta * eta * alpha * L / denom


def beta_case2(eta: float, alpha: float, L: float, m: float, nu: float) -> float:
    """Convergence coefficient for the regime nu (1 - eta alpha) <= 1."""
    shrink = 1.0 - 2.0 * eta * L
    if shrink <= 0.0:
        return math.inf
    return 1.0 / (nu * eta * alpha * shrink * m) + 2.0 * eta * L / shrink


def svrg_kappa(eta: float, alpha: float, L: float, m: float, nu: float,
               omega: float, T: float) -> float:
    """Residual-error scale kappa = 4 nu eta^2 T (2 L omega + T) m + 2 T omega / alpha."""
    if T == 0.0:
        return 0.0
    return 4.0 * nu * eta * eta * T * (2.0 * L * omega + T) * m + 2.0 * T * omega / alpha


@dataclass(frozen=True)
class ConvergenceCoefficients:
    """Per-stage convergence coefficient beta and residual error tau.

    ``regime`` is "case1" when nu (1 - eta alpha) > 1 and "case2" otherwise.
    ``feasible`` records whether the sufficient conditions eta < 1/(4L),
    nu < 4L/(4L - alpha) and beta < 1 all hold; beta/tau are still reported
    for inspection when they do not.
    """

    regime: str
    beta: float
    tau: float
    kappa: float
    feasible: bool


def svrg_coefficients(eta: float, alpha: float, L: float, m: float, nu: float,
                      omega: float, T: float) -> ConvergenceCoefficients:
    """Two-regime convergence coefficients of the variance-reduced solver.

    Inputs: step size eta, restricted curvature bounds alpha <= L (alpha of
    the aggregate objective, L per sample), update frequency m, expansion
    factor nu, feasible radius omega and the restricted gradient norm T at
    the constrained optimum (T = 0 gives tau = 0).
    """
    if min(eta, alpha, L, m, nu) <= 0.0 or omega <= 0.0 or T < 0.0:
        raise ValueError("eta, alpha, L, m, nu, omega must be positive and T >= 0")
    if alpha > L:
        raise ValueError("need alpha <= L")

    kappa = svrg_kappa(eta, alpha, L, m, nu, omega, T)
    if nu * (1.0 - eta * alpha) > 1.0:
        regime = "case1"
        beta = beta_case1(eta, alpha, L, m, nu)
        denom = 2.0 * nu * eta * alpha - 2.0 * nu * eta * eta * alpha * L - nu + 1.0
        if kappa == 0.0:
            tau = 0.0
        elif denom > 0.0 and beta < 1.0:
            tau = alpha * kappa / (2.0 * denom * (1.0 - beta) * m)
        else:
            tau = math.inf
    else:
        regime = "case2"
        beta = beta_case2(eta, alpha, L, m, nu)
        shrink = 1.0 - 2.0 * eta * L
        if kappa == 0.0:
            tau = 0.0
        elif shrink > 0.0 and beta < 1.0:
            tau = kappa / (2.0 * nu * eta * alpha * shrink * (1.0 - beta) * m)
        else:
            tau = math.inf

    feasible = (eta < 1.0 / (4.0 * L)
                and nu < 4.0 * L / (4.0 * L - alpha)
                and beta < 1.0)
    return ConvergenceCoefficients(regime=regime, beta=beta, tau=tau,
                                   kappa=kappa, feasible=feasible)


class OptimalNu(NamedTuple):
    nu: float
    k_over_K: float


def optimal_nu(eta: float, alpha: float) -> OptimalNu:
    """Expansion factor minimizing beta at fixed (eta, m): nu = 1/(1 - eta alpha).

    Also reports the sparsity ratio k/K = (1 - eta alpha)/(eta alpha)^2 that
    realizes it.
    """
    p = eta * alpha
    if not 0.0 < p < 1.0:
        raise ValueError("need 0 < eta * alpha < 1")
    return OptimalNu(nu=1.0 / (1.0 - p), k_over_K=(1.0 - p) / (p * p))


class UpdateFrequencyBound(NamedTuple):
    m: int
    bound: float
    overflow: bool


# Bounds beyond this are reported as overflow rather than a usable count.
_M_OVERFLOW = 1e15


def min_update_frequency(eta: float, alpha: float, L: float,
                         nu: float) -> UpdateFrequencyBound:
    """Smallest integer update frequency with m > 1/(nu eta alpha (1 - 4 eta L))."""
    if min(eta, alpha, L, nu) <= 0.0:
        raise ValueError("inputs must be positive")
    slack = 1.0 - 4.0 * eta * L
    if slack <= 0.0:
        raise ValueError("need eta < 1/(4L)")
    bound = 1.0 / (nu * eta * alpha * slack)
    if bound > _M_OVERFLOW:
        return UpdateFrequencyBound(m=0, bound=bound, overflow=True)
    nearest = round(bound)
    if abs(bound - nearest) <= 1e-9 * max(bound, 1.0):  # snap fp noise at integers
        bound = float(nearest)
    return UpdateFrequencyBound(m=int(math.floor(bound)) + 1, bound=bound,
                                overflow=False)


class SampleSize(NamedTuple):
    n: int
    degenerate: bool


def sample_size_rip(delta: float, r: int, d: int, C0: float) -> SampleSize:
    """Sample-size heuristic n >= C0 delta^-2 r log(d/r), rounded up.

    C0 is caller-supplied (the constant is unknown in general), so the result
    is meaningful for relative comparisons only.  r = d zeroes the log term;
    that degenerate case is flagged.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    r, d = int(r), int(d)
    if not 1 <= r <= d:
        raise ValueError("need 1 <= r <= d")
    if C0 <= 0.0:
        raise ValueError("C0 must be positive")
    if r == d:
        return SampleSize(n=0, degenerate=True)
    n = math.ceil(C0 * delta ** -2 * r * math.log(d / r))
    return SampleSize(n=int(n), degenerate=False)
