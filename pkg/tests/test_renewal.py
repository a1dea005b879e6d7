import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DATA
from pertsmp import corpus, moments, renewal
from pertsmp.model import load_kernel


def test_convolve_examples():
    g = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(renewal.convolve([1.0], g), g)
    np.testing.assert_array_equal(renewal.convolve([0, 1], [0, 1]), [0, 0, 1])
    half = [0, 0.5, 0.5]
    np.testing.assert_allclose(renewal.convolve(half, half), [0, 0, 0.25, 0.5, 0.25])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_convolve_definition(f, g):
    out = renewal.convolve(f, g)
    assert len(out) == len(f) + len(g) - 1
    for n in range(len(out)):
        ref = sum(f[n - k] * g[k] for k in range(len(g)) if 0 <= n - k < len(f))
        assert out[n] == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("support, d", [({1, 2}, 1), ({2, 4, 6}, 2), ({3}, 3), ([6, 9, 15], 3)])
def test_period_examples(support, d):
    assert renewal.period_of(support) == d


def test_period_mass_threshold():
    g = np.zeros(10)
    g[[2, 4]] = 0.4
    g[5] = 1e-15
    assert renewal.period_of(g) == 2
    g[5] = 1e-10
    assert renewal.period_of(g) == 1


def test_period_empty():
    with pytest.raises(ValueError, match="empty"):
        renewal.period_of(set())


def test_taboo_distributions_geometric(geometric):
    g = renewal.taboo_distributions(geometric, 0.1, 1, (), 20)[1]
    assert g[1] == pytest.approx(0.9)
    assert np.all(np.delete(g, 1) == 0)


def test_taboo_distributions_cycle():
    k = load_kernel(DATA / "periodic.json")
    g = renewal.taboo_distributions(k, 0.0, 1, (), 20)[1]
    assert np.flatnonzero(g).tolist() == [2]
    assert renewal.return_time_support(k, 0.0, 1, 20) == [2]


def test_taboo_distributions_respect_taboo(cycle4):
    # avoiding state 2, state 1 reaches 3 only through the time-2 jump
    g = renewal.taboo_distributions(cycle4, 0.0, 1, (2,), 50)
    assert set(g) == {1, 3}
    assert np.flatnonzero(g[3]).tolist() == [2]


def test_horizon_shorter_than_support(cycle4):
    with pytest.raises(renewal.HorizonError):
        renewal.taboo_distributions(cycle4, 0.0, 1, (), 2)
    with pytest.raises(renewal.HorizonError):
        renewal.renewal_solve(cycle4, 0.0, 1, 2)
    with pytest.raises(renewal.HorizonError):
        renewal.renewal_solve(cycle4, 0.0, 1, 0)


@pytest.mark.parametrize("name", ["pseudo3", "quasi3", "cycle4"])
def test_return_mass_matches_mgf(name):
    k = corpus.load(name)
    for i in range(1, k.num_states + 1):
        g = renewal.taboo_distributions(k, 0.05, i, (), 2000, targets=[i])[i]
        assert g.sum() <= 1 + 1e-15
        assert g.sum() == pytest.approx(moments.hitting_mgf(k, 0.05, 0.0, i)[i - 1], abs=1e-12)


def test_geometric_closed_form(geometric):
    sol = renewal.renewal_solve(geometric, 0.1, 1, 200)
    np.testing.assert_allclose(sol.P[:, 0], 0.9 ** np.arange(201), rtol=1e-12)


def test_quasi_closed_form(quasi):
    sol = renewal.renewal_solve(quasi, 0.0, 1, 100)
    np.testing.assert_allclose(sol.P[:, 0], 2.0 ** -np.arange(101), rtol=1e-12, atol=0)


@pytest.mark.parametrize("name", corpus.names())
@pytest.mark.parametrize("eps", [0.0, 0.05])
def test_dual_route_and_mass(name, eps):
    k = corpus.load(name)
    for i in range(1, k.num_states + 1):
        sol = renewal.renewal_solve(k, eps, i, 300)
        assert sol.route_gap <= 1e-12
        np.testing.assert_allclose(sol.P_direct.sum(axis=1) + sol.absorbed, 1, atol=1e-12)
        assert np.all(sol.P >= -1e-15) and np.all(sol.P <= 1 + 1e-12)
        assert np.all(sol.h >= 0) and np.all(sol.g >= 0)
        assert sol.g.sum() <= 1 + 1e-12
        np.testing.assert_array_equal(sol.P[0], np.eye(k.num_states)[i - 1])


@pytest.mark.parametrize("name", corpus.names())
def test_period_solidarity(name):
    k = corpus.load(name)
    periods = set()
    for i in range(1, k.num_states + 1):
        sol = renewal.renewal_solve(k, 0.0, i, 200)
        d = renewal.period_of(sol.g)
        assert d == renewal.period_of(renewal.return_time_support(k, 0.0, i))
        periods.add(d)
    assert len(periods) == 1


@pytest.mark.parametrize("name", ["pseudo3", "quasi3", "cycle4"])
def test_weighted_tail_bound_is_honest(name):
    k = corpus.load(name)
    eps = 0.05
    for i in range(1, k.num_states + 1):
        rho = 0.5 * moments.spectral_abscissa(k, eps, i)
        long = renewal.renewal_solve(k, eps, i, 4000)
        for n_max in (20, 60, 150):
            tail_part = np.where(np.arange(4001) > n_max, long.alive, 0.0)
            true_tail = renewal.discounted_sum(tail_part, rho)
            bound = renewal.weighted_tail_bound(k, eps, i, rho, n_max)
            assert true_tail <= bound * (1 + 1e-9) + 1e-300
        assert renewal.weighted_tail_bound(k, eps, i, moments.spectral_abscissa(k, eps, i) + 0.1, 10) == math.inf


@pytest.mark.parametrize("name", ["pseudo3", "quasi3", "cycle4"])
def test_occupation_sum_matches_taboo_formula(name):
    k = corpus.load(name)
    for i in range(1, k.num_states + 1):
        rho = 0.25 * moments.spectral_abscissa(k, 0.0, i)
        horizon = renewal.auto_horizon(k, 0.0, i, rho)
        sol = renewal.renewal_solve(k, 0.0, i, horizon)
        dp = renewal.discounted_sum(sol.h, rho)
        formula = moments.taboo_occupation(k, 0.0, rho, i)[i - 1] * moments.mean_sojourn_weights(k, 0.0, rho)
        tail = renewal.weighted_tail_bound(k, 0.0, i, rho, horizon)
        assert np.all(dp <= formula + 1e-12)
        assert np.max(formula - dp) <= tail + 1e-12


def test_discounted_sum_no_overflow():
    v = np.zeros(3000)
    v[:5] = 0.2
    assert renewal.discounted_sum(v, 1.0) == pytest.approx(0.2 * sum(math.exp(n) for n in range(5)))
    assert renewal.discounted_sum(v, 0.0, 1) == pytest.approx(0.2 * 10)
    two = np.stack([v, 2 * v], axis=1)
    np.testing.assert_allclose(renewal.discounted_sum(two, 0.5), np.array([1, 2]) * renewal.discounted_sum(v, 0.5))


def test_csv_dump(tmp_path, pseudo3):
    sol = renewal.renewal_solve(pseudo3, 0.05, 1, 10)
    out = tmp_path / "oracle.csv"
    sol.dump_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "n,g,h_1,h_2,P_1,P_2,absorbed"
    assert len(lines) == 12
    assert float(lines[5].split(",")[4]) == sol.P[4, 0]
