"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.  Criterion 9 needs local
IDX digit files (see README) and is skipped with a message otherwise.
Criterion 4b asserts the specified small-k non-recovery rate literally; the
faithful implementation does not exhibit it (see the failure message), so
that single test is expected to fail until the discrepancy is resolved.
"""

import dataclasses
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from htsparse.analysis import (
    beta_case1,
    beta_case2,
    rip_threshold_cosamp,
    rip_threshold_iht,
    svrg_coefficients,
)
from htsparse.harness import (
    Scenario,
    classify_experiment,
    fit_measurement_line,
    generate_sensing_problem,
    load_mnist_idx,
    min_measurements_search,
    pairwise_task,
    run_trials,
    sweep_phase_diagram,
    trial_seed,
)
from htsparse.objectives import (
    RegularizedLeastSquares,
    RegularizedLogistic,
    estimate_restricted_curvature,
)
from htsparse.solvers_batch import SolverConfig, grasp
from htsparse.solvers_stochastic import SvrgConfig, ht_svrg
from htsparse.thresholding import NU_MAX, deviation_bound, hard_threshold, tightness_witness

STANDARD = Scenario(n=100, d=256, K=4)
RESIDUAL_STOP = 0.5 * (1e-12) ** 2 / 100  # objective value at residual 1e-12


def report(criterion, detail):
    print(f"criterion {criterion}: PASS ({detail})")


def test_criterion_01_tight_bound_oracle():
    t0 = time.time()
    rng = np.random.default_rng(314159)
    pairs = 10_000
    worst = 0.0
    witnesses = 0
    for _ in range(1000):
        d = int(rng.integers(2, 13))
        k = int(rng.integers(1, d + 1))
        K = int(rng.integers(1, k + 1))
        nu = deviation_bound(k, K, d).nu
        B = rng.normal(size=(pairs, d))
        vals = rng.normal(size=(pairs, K))
        supports = rng.random((pairs, d)).argsort(axis=1)[:, :K]
        A = np.zeros((pairs, d))
        np.put_along_axis(A, supports, vals, axis=1)
        cut = np.argsort(-np.abs(B), axis=1, kind="stable")[:, :k]
        W = np.zeros_like(B)
        np.put_along_axis(W, cut, np.take_along_axis(B, cut, axis=1), axis=1)
        num = np.sum((W - A) ** 2, axis=1)
        den = np.sum((B - A) ** 2, axis=1)
        mask = den > 0
        ratios = num[mask] / den[mask]
        assert float(np.max(ratios)) <= nu * (1 + 1e-8)
        worst = max(worst, float(np.max(ratios)) / nu)
        if K < d - k:
            b, a = tightness_witness(k, K, d)
            w = hard_threshold(b, k)
            achieved = np.sum((w - a) ** 2) / np.sum((b - a) ** 2)
            assert abs(achieved - nu) <= 1e-10 * nu
            witnesses += 1
    elapsed = time.time() - t0
    assert elapsed <= 120.0
    report(1, f"10^7 ratios, max ratio/nu {worst:.9f}; "
              f"{witnesses} exact witnesses; {elapsed:.0f}s")


def test_criterion_02_closed_form_spot_checks():
    sqrt_nu = deviation_bound(4, 4, 256).sqrt_nu
    assert abs(sqrt_nu - 1.6180) < 1e-3
    assert abs(sqrt_nu - 1.619) < 1e-3
    assert abs(rip_threshold_iht(NU_MAX) - 0.22) < 5e-3
    assert abs(rip_threshold_iht(1.25) - 0.32) < 5e-3
    assert abs(rip_threshold_cosamp(NU_MAX).value - 0.31) < 5e-3
    assert abs(rip_threshold_iht(4.0) - 0.18) < 5e-3
    report(2, "sqrt_nu 1.6180; isometry thresholds 0.22/0.32/0.31; legacy 0.18")


def test_criterion_03_fixed_rate_identity():
    for c in (1.0, 1.5, 2.0, 5.0, 10.0, 50.0):
        L = 1.0
        eta = 1.0 / (5.0 * L)
        alpha = L / c
        nu = 1.0 / (1.0 - eta * alpha)
        m = 12.5 * (5.0 * c - 1.0)
        coeffs = svrg_coefficients(eta, alpha, L, m, nu, omega=1.0, T=0.0)
        assert abs(coeffs.beta - 0.8) <= 1e-12
        assert coeffs.tau == 0.0
    report(3, "beta = 0.8 to 1e-12 for c in {1, 1.5, 2, 5, 10, 50}")


def test_criterion_04a_standard_setting_recovery():
    t0 = time.time()
    svrg_cfg = SvrgConfig(S=10_000, m=300, k=36, tol_objective=RESIDUAL_STOP)
    svrg = run_trials("ht-svrg", svrg_cfg, STANDARD, trials=100, master_seed=0)
    assert svrg.success_rate >= 95.0
    pgd_cfg = SolverConfig(k=36, max_iters=2000, tol_residual=1e-12)
    pgd = run_trials("pgd", pgd_cfg, STANDARD, trials=100, master_seed=0)
    assert pgd.success_rate >= 95.0
    elapsed = time.time() - t0
    assert elapsed <= 300.0
    report("4a", f"ht-svrg {svrg.success_rate:.0f}%, pgd {pgd.success_rate:.0f}% "
                 f"over 100 trials; {elapsed:.0f}s")


def test_criterion_04b_small_k_no_recovery():
    # Asserted literally as specified.  The faithful update rule recovers at
    # k = 10 in the vast majority of trials, so this stays red; see the
    # decisions ledger for the full analysis.
    cfg = SvrgConfig(S=1000, m=300, k=10, tol_objective=RESIDUAL_STOP)
    result = run_trials("ht-svrg", cfg, STANDARD, trials=100, master_seed=0)
    if result.success_rate < 5.0:
        report("4b", f"k=10 success {result.success_rate:.0f}% < 5%")
    assert result.success_rate < 5.0, (
        f"criterion 4b: FAIL - measured k=10 success rate is "
        f"{result.success_rate:.0f}% (spec requires < 5%); the faithful "
        f"algorithm recovers at k=10 under the stated protocol")


def test_criterion_05_divergence_reproduction():
    t0 = time.time()
    diverged = 0
    for i in range(20):
        seed = trial_seed(0, i)
        prob = generate_sensing_problem(100, 256, 4, rng_seed=seed)
        model = RegularizedLeastSquares(prob, gamma=0.0)
        rep = ht_svrg(model, SvrgConfig(S=80, m=300, k=36, eta=3.0,
                                        rng_seed=seed))
        diverged += rep.stop_reason == "diverged"
    elapsed = time.time() - t0
    assert diverged >= 18  # >= 90% of 20 trials
    assert elapsed <= 60.0
    report(5, f"{diverged}/20 trials tripped the 1e120 guard at eta=3; "
              f"{elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_06_phase_diagram_ordering():
    t0 = time.time()
    d = 256
    n_grid = list(range(16, 257, 16))
    K_grid = list(range(1, 26, 4))

    # matched full-gradient budgets; 300 iterations starves the heuristic
    # step at small n, so both solvers get the same 2000-iteration cap
    def iht_cell(n, K):
        return SolverConfig(k=K, eta=1.0, max_iters=2000, tol_residual=1e-9)

    def pgd_cell(n, K):
        return SolverConfig(k=min(9 * K, d), max_iters=2000, tol_residual=1e-9)

    iht_res = sweep_phase_diagram("iht", iht_cell, n_grid, K_grid, d, 50,
                                  master_seed=2024)
    pgd_res = sweep_phase_diagram("pgd", pgd_cell, n_grid, K_grid, d, 50,
                                  master_seed=2024)
    keys = [(r.n, r.K) for r in iht_res]
    iht_rate = dict(zip(keys, (r.success_rate for r in iht_res)))
    pgd_rate = dict(zip(keys, (r.success_rate for r in pgd_res)))

    dominated = sum(pgd_rate[c] >= iht_rate[c] - 5.0 for c in keys)
    assert dominated >= 0.9 * len(keys)

    for rate in (iht_rate, pgd_rate):
        for K in K_grid:
            series = [rate[(n, K)] for n in n_grid]
            for lo, hi in zip(series, series[1:]):
                assert hi >= lo - 5.0
    elapsed = time.time() - t0
    assert elapsed <= 1800.0
    report(6, f"pgd >= iht - 5 on {dominated}/{len(keys)} cells; "
              f"success monotone in n within 5 points; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_07_min_measurement_linearity():
    t0 = time.time()

    def cell(n, K):
        return SolverConfig(k=min(9 * K, 256), max_iters=2000,
                            tol_residual=1e-9)

    K_list = [2, 6, 10, 14, 18]
    ns = []
    for K in K_list:
        res = min_measurements_search("pgd", cell, K=K, target_rate=95, d=256,
                                      trials=50, master_seed=7)
        assert not res.capped
        ns.append(res.n)
    fit = fit_measurement_line(K_list, ns)
    assert fit.r_squared >= 0.9
    assert fit.slope > 0
    assert all(a < b for a, b in zip(ns, ns[1:]))
    elapsed = time.time() - t0
    assert elapsed <= 1200.0
    report(7, f"n(K) = {ns}, slope {fit.slope:.1f}, R^2 {fit.r_squared:.3f}; "
              f"{elapsed:.0f}s")


def test_criterion_08_property_suites():
    t0 = time.time()
    rng = np.random.default_rng(99)

    # gradients vs centered finite differences at 1e-5
    prob = generate_sensing_problem(25, 18, 3, rng_seed=1)
    for model in (RegularizedLeastSquares(prob, gamma=0.1),
                  RegularizedLogistic(
                      dataclasses.replace(prob, y=np.sign(prob.y + 1e-9),
                                          x_true=None, noise_sigma=None),
                      gamma=0.05)):
        for _ in range(100):
            x = np.zeros(model.d)
            support = rng.choice(model.d, size=3, replace=False)
            x[support] = rng.normal(size=3)
            g = model.full_gradient(x)
            fd = np.zeros_like(x)
            for j in range(model.d):
                h = 1e-6 * (1 + abs(x[j]))
                up, dn = x.copy(), x.copy()
                up[j] += h
                dn[j] -= h
                fd[j] = (model.value(up) - model.value(dn)) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)

    # variance-reduction cancellation is exact at the snapshot
    model = RegularizedLeastSquares(prob, gamma=0.1)
    x_tilde = rng.normal(size=model.d)
    mu = model.full_gradient(x_tilde)
    for i in range(model.n):
        direction = (model.sample_gradient(i, x_tilde)
                     - model.sample_gradient(i, x_tilde) + mu)
        assert np.array_equal(direction, mu)

    # iterate sparsity and ball feasibility checked every inner step
    prob2 = generate_sensing_problem(40, 64, 3, rng_seed=2)
    model2 = RegularizedLeastSquares(prob2, gamma=0.0)
    rep = ht_svrg(model2, SvrgConfig(S=3, m=80, k=9, omega=1.5,
                                     validate_iterates=True))
    assert np.count_nonzero(rep.x_final) <= 9

    # determinism under seeds
    cfg = SvrgConfig(S=4, m=50, k=8, rng_seed=7)
    a = ht_svrg(model2, cfg)
    b = ht_svrg(model2, cfg)
    assert np.array_equal(a.x_final, b.x_final)
    assert a.objective_trace == b.objective_trace

    # regime continuity of the convergence coefficient at the boundary
    for _ in range(50):
        L = float(rng.uniform(0.5, 4.0))
        alpha = L * float(rng.uniform(0.05, 1.0))
        eta = float(rng.uniform(0.01, 0.24)) / L
        m = float(rng.integers(50, 5000))
        nu_b = 1.0 / (1.0 - eta * alpha)
        b1 = beta_case1(eta, alpha, L, m, nu_b)
        b2 = beta_case2(eta, alpha, L, m, nu_b)
        assert abs(b1 - b2) <= 1e-9 * abs(b2)

    elapsed = time.time() - t0
    assert elapsed <= 120.0
    report(8, f"gradients, cancellation, feasibility, determinism, "
              f"regime continuity; {elapsed:.0f}s")


def _mnist_dir():
    return Path(os.environ.get("HTSPARSE_MNIST_DIR", "data/mnist"))


def _find(directory, stem):
    for suffix in ("", ".gz"):
        candidate = directory / (stem + suffix)
        if candidate.exists():
            return candidate
    return None


def _load_mnist_or_skip():
    directory = _mnist_dir()
    paths = {}
    for key, stem in (("train_images", "train-images-idx3-ubyte"),
                      ("train_labels", "train-labels-idx1-ubyte"),
                      ("test_images", "t10k-images-idx3-ubyte"),
                      ("test_labels", "t10k-labels-idx1-ubyte")):
        found = _find(directory, stem)
        if found is None:
            pytest.skip(
                f"criterion 9 skipped: digit dataset not found under "
                f"{directory} (set HTSPARSE_MNIST_DIR to a directory with the "
                f"four IDX files, optionally gzipped)")
        paths[key] = found
    train = load_mnist_idx(paths["train_images"], paths["train_labels"])
    test = load_mnist_idx(paths["test_images"], paths["test_labels"])
    return train, test


@pytest.mark.slow
def test_criterion_09_digit_classification():
    t0 = time.time()
    train, test = _load_mnist_or_skip()
    assert train.images.shape == (60000, 784)
    assert test.images.shape == (10000, 784)
    tasks = [(0, 9), (1, 7), (2, 3), (4, 5), (6, 8)]
    close = 0
    plateaued = 0
    details = []
    for a, b in tasks:
        runs = classify_experiment(pairwise_task(train, a, b),
                                   pairwise_task(test, a, b),
                                   k_list=(70, 784), stages=25, rng_seed=0)
        by_k = {r.k: r for r in runs}
        gap = by_k[784].test_accuracy - by_k[70].test_accuracy
        close += gap <= 0.02
        trace = np.array(by_k[70].stage_objectives)
        total = trace[0] - trace.min()
        late = trace[19] - trace.min()
        plateaued += late <= 0.05 * total
        details.append(f"{a}v{b}: acc70 {by_k[70].test_accuracy:.4f} "
                       f"acc784 {by_k[784].test_accuracy:.4f}")
    elapsed = time.time() - t0
    assert close >= 4, details
    assert plateaued >= 4, "objective did not plateau within 20 stages"
    assert elapsed <= 1800.0
    report(9, f"k=70 within 2% of k=784 on {close}/5 tasks; "
              f"plateau by stage 20 on {plateaued}/5; {elapsed:.0f}s")


def test_criterion_10_restricted_condition_number():
    t0 = time.time()
    K, k, d = 2, 8, 256
    r = 3 * k + K
    n = math.ceil(8 * r * math.log(math.e * d / r))
    ok = 0
    seeds = 40
    for seed in range(seeds):
        prob = generate_sensing_problem(n, d, K, rng_seed=seed)
        model = RegularizedLeastSquares(prob, gamma=0.0)
        est = estimate_restricted_curvature(model, r=r, num_probes=50,
                                            rng_seed=seed)
        ok += est.L_full / est.alpha_hat <= 3.0
    elapsed = time.time() - t0
    assert ok >= math.ceil(0.95 * seeds)
    assert elapsed <= 120.0
    report(10, f"restricted condition <= 3 on {ok}/{seeds} seeds at "
               f"n={n}; {elapsed:.0f}s")
