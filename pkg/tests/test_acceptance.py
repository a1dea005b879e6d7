"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import math
import time
from fractions import Fraction

import mpmath
import numpy as np

from conftest import ACCEPTANCE_LINES
from pertsmp import corpus, moments, numerics, renewal
from pertsmp.expansion import asymptotic_predict, expand, hitting_moment_series, solve_characteristic_root
from pertsmp.model import validate_model
from pertsmp.simulator import SimConfig, simulate


def record(num: int, ok: bool, detail: str):
    line = f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_acceptance_1_geometric_closed_form(geometric):
    t0 = time.perf_counter()
    exact = expand(geometric, 5, arith="exact")
    flt = expand(geometric, 5)
    elapsed = time.perf_counter() - t0
    want = [Fraction(1, n) for n in range(1, 6)]
    exact_ok = exact.rho0 == 0 and exact.rho0_exp == 1 and exact.c == want
    float_err = max(abs(c - 1 / n) for n, c in enumerate(flt.c, start=1))
    ok = exact_ok and flt.rho0 == 0 and float_err <= 1e-10 and elapsed < 1
    record(1, ok, f"rational c={[str(c) for c in exact.c]}, float max err {float_err:.2e}, {elapsed:.3f}s")


def test_acceptance_2_quasi_closed_form(quasi):
    t0 = time.perf_counter()
    rx = expand(quasi, 4)
    rx_exact = expand(quasi, 4, arith="exact")
    sol = renewal.renewal_solve(quasi, 0.0, 1, 60)
    pred = np.array([asymptotic_predict(rx, 1, 1, 0.0, n, 1) for n in range(61)])
    elapsed = time.perf_counter() - t0
    root_err = abs(rx.rho0 - math.log(2))
    c_err = max(abs(c - 1 / n) for n, c in enumerate(rx.c, start=1))
    closed = 2.0 ** -np.arange(61)
    pred_gap = float(np.max(np.abs(pred - sol.P[:, 0])))
    ok = (
        root_err <= 1e-12
        and c_err <= 1e-10
        and rx_exact.c == [Fraction(1, n) for n in range(1, 5)]
        and rx_exact.rho0_exp == 2
        and abs(rx.pi_tilde[0][0] - 1) <= 1e-12
        and pred_gap <= 1e-12
        and np.allclose(sol.P[:, 0], closed, rtol=1e-12, atol=0)
        and elapsed < 1
    )
    record(
        2, ok, f"|rho0-ln2|={root_err:.1e}, c err {c_err:.1e}, pi={rx.pi_tilde[0][0]:.15g}, "
        f"prediction vs oracle {pred_gap:.1e}, {elapsed:.3f}s"
    )


def test_acceptance_3_ratio_convergence(pseudo3):
    t0 = time.perf_counter()
    lam = 1.0
    rx = expand(pseudo3, 1)
    n_states = pseudo3.num_states
    errs = []
    for eps in (0.04, 0.02, 0.01):
        n = math.floor(lam / eps)
        worst = 0.0
        for i in range(1, n_states + 1):
            sol = renewal.renewal_solve(pseudo3, eps, i, max(n, pseudo3.max_time))
            for j in range(1, n_states + 1):
                ratio = sol.P[n, j - 1] * math.exp(rx.rho0 * n)
                target = rx.pi_tilde[i - 1][j - 1] * math.exp(-rx.c[0] * lam)
                worst = max(worst, abs(ratio / target - 1))
        errs.append(worst)
    elapsed = time.perf_counter() - t0
    ok = errs[0] > errs[1] > errs[2] and errs[2] < 0.05 and elapsed < 30
    record(3, ok, f"relative errors {[f'{e:.4f}' for e in errs]} at eps 0.04/0.02/0.01, {elapsed:.2f}s")


def _series_slopes(kernel, k=3, eps_grid=("1e-1", "1e-2", "1e-3", "1e-4")):
    """Worst log-log slope minus (k - r) over targets j and r = 0..2, at high precision."""
    worst = math.inf
    exact_cases = 0
    with mpmath.workdps(numerics.MP_DPS):
        rho0 = solve_characteristic_root(kernel, 0, 1, "mp")
        grid = [mpmath.mpf(e) for e in eps_grid]
        for j in range(1, kernel.num_states + 1):
            phis = hitting_moment_series(kernel, rho0, j, k, "mp")
            direct = [moments.hitting_mgf_mixed(kernel, e, rho0, j, 2, "mp") for e in grid]
            for r in range(3):
                errs = []
                for e, d in zip(grid, direct):
                    approx = phis[r].evaluate(e)[:, 0]
                    errs.append(max(abs(a - b) for a, b in zip(approx, d[r])))
                if max(errs) < mpmath.mpf(10) ** (-numerics.MP_DPS + 10):
                    exact_cases += 1  # series is a polynomial of degree <= k - r here
                    continue
                x = np.log([float(e) for e in grid])
                y = np.array([float(mpmath.log(v)) for v in errs])
                slope = np.polyfit(x, y, 1)[0]
                worst = min(worst, slope - (k - r))
    return worst, exact_cases


def test_acceptance_4_series_accuracy(bundled):
    t0 = time.perf_counter()
    margins = {}
    exact_total = 0
    for name, kernel in bundled.items():
        margins[name], exact = _series_slopes(kernel)
        exact_total += exact
    elapsed = time.perf_counter() - t0
    worst = min(margins.values())
    ok = worst >= 0.9 and elapsed < 10
    shown = ", ".join(f"{n}:{'exact' if m == math.inf else f'{m:+.2f}'}" for n, m in margins.items())
    record(4, ok, f"min slope-(k-r) per kernel {shown}; {exact_total} exact cases; {elapsed:.2f}s")


def test_acceptance_5_solidarity(random_kernels):
    root_spread = 0.0
    identity = 0.0
    period_ok = True
    for kernel in random_kernels:
        n = kernel.num_states
        assert validate_model(kernel).passed
        for eps in (0.0, 0.05, 0.1):
            roots = [solve_characteristic_root(kernel, eps, i) for i in range(1, n + 1)]
            root_spread = max(root_spread, max(roots) - min(roots))
            for rho in np.linspace(-0.5, roots[0], 5):
                for i in range(1, n + 1):
                    for j in range(1, n + 1):
                        identity = max(identity, moments.solidarity_check(kernel, eps, rho, i, j))
            periods = set()
            for i in range(1, n + 1):
                g = renewal.renewal_solve(kernel, eps, i, 200).g
                d = renewal.period_of(g)
                period_ok &= d == renewal.period_of(renewal.return_time_support(kernel, eps, i))
                periods.add(d)
            period_ok &= len(periods) == 1
    ok = root_spread <= 1e-10 and identity <= 1e-10 and period_ok
    record(
        5, ok, f"{len(random_kernels)} random kernels: root spread {root_spread:.1e}, "
        f"identity residual {identity:.1e}, periods equal across states: {period_ok}"
    )


def test_acceptance_6_oracle_self_consistency(bundled, random_kernels):
    gap = mass = 0.0
    kernels = list(bundled.values()) + list(random_kernels)
    for kernel in kernels:
        for eps in (0.0, 0.5 * kernel.eps_max, kernel.eps_max):
            for i in range(1, kernel.num_states + 1):
                sol = renewal.renewal_solve(kernel, eps, i, 500)
                gap = max(gap, sol.route_gap)
                mass = max(mass, float(np.max(np.abs(sol.P_direct.sum(axis=1) + sol.absorbed - 1))))
    ok = gap <= 1e-12 and mass <= 1e-12
    record(6, ok, f"{len(kernels)} kernels, n<=500: route gap {gap:.1e}, mass defect {mass:.1e}")


MC_KERNELS = ("pseudo3", "quasi3", "cycle4")


def test_acceptance_7_monte_carlo():
    t0 = time.perf_counter()
    eps = 0.1
    worst_z = 0.0
    for name in MC_KERNELS:
        kernel = corpus.load(name)
        for n in (10, 50):
            exact = renewal.renewal_solve(kernel, eps, 1, n).P[n]
            est = simulate(kernel, SimConfig(eps=eps, i=1, n=n, trials=10**6, seed=2024, workers=4))
            worst_z = max(worst_z, float(np.max(np.abs(est.z_scores(exact)))))

    # coverage of nominal 95% Wald intervals, pooled over kernels and states
    reps, trials, n = 200, 5000, 10
    covered = total = 0
    for name in MC_KERNELS:
        kernel = corpus.load(name)
        exact = renewal.renewal_solve(kernel, eps, 1, n).P[n]
        for rep in range(reps):
            est = simulate(kernel, SimConfig(eps=eps, i=1, n=n, trials=trials, seed=10_000 + rep))
            covered += int(np.sum(np.abs(est.P - exact) <= 1.959964 * est.se))
            total += kernel.num_states
    coverage = covered / total
    elapsed = time.perf_counter() - t0
    ok = worst_z <= 4 and 0.90 <= coverage <= 0.99 and elapsed < 120
    record(7, ok, f"max |z| {worst_z:.2f} at 1e6 trials; 95% CI coverage {coverage:.3f} over {reps} reps; {elapsed:.1f}s")


def test_acceptance_8_pseudo_rows(random_kernels):
    kernels = [corpus.load(n) for n in corpus.PSEUDO_STATIONARY]
    kernels += [k for k in random_kernels if solve_characteristic_root(k, 0.0) == 0]
    row_gap = sum_gap = 0.0
    for kernel in kernels:
        rx = expand(kernel, 1)
        assert rx.regime == "pseudo-stationary"
        pi = np.array(rx.pi_tilde)
        row_gap = max(row_gap, float(np.max(np.abs(pi - pi[0]))))
        sum_gap = max(sum_gap, float(np.max(np.abs(pi.sum(axis=1) - 1))))
    ok = row_gap <= 1e-9 and sum_gap <= 1e-9 and len(kernels) > len(corpus.PSEUDO_STATIONARY)
    record(8, ok, f"{len(kernels)} pseudo-stationary kernels: row spread {row_gap:.1e}, |sum-1| {sum_gap:.1e}")
