"""Characteristic root, its expansion in eps, and the limiting constants.

The decay rate ``rho(eps)`` of non-absorption probabilities solves
``phi_ii(eps)(rho) = 1``. Writing ``rho(eps) = rho0 + c_1 eps + ... + c_k eps^k``
and expanding ``phi_ii(eps)(rho0 + delta)`` in both ``eps`` and ``delta``
gives a triangular recursion for ``c_n`` in terms of the table

    b[r][n] = eps^n coefficient of  E_i mu_i^r e^{rho0 mu_i}; nu_0 > nu_i,

which is read off the moment-series recursion built here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Any

import mpmath
import numpy as np
from scipy import optimize
from scipy.special import comb

from . import moments, numerics, renewal
from .numerics import ExactLog
from .series import MatrixEpsSeries, SingularSeriesError, series_add, series_mul, series_neumann_inverse, series_scale

if TYPE_CHECKING:
    from .model import PerturbedKernel

ROOT_TOL = 1e-12
PI_TOL = 1e-8
EXACT_DENOM = 10**9


class RootNotFound(ArithmeticError):
    """The characteristic equation has no root below the abscissa, or Newton stalled."""


class IrrationalRootError(RootNotFound):
    """The exact backend cannot represent the root: ``e^rho`` is not a small rational."""


class ConsistencyError(ArithmeticError):
    """Two independent routes to the same quantity disagree."""


# characteristic root


def _phi(kernel, eps, rho, i, arith="float"):
    return moments.hitting_mgf(kernel, eps, rho, i, arith)[i - 1]


def _no_absorption(kernel, eps) -> bool:
    """Exact test that no state can jump to 0 at this eps."""
    q = kernel.q_array(eps, "exact")
    return not any(q[1:, 0, :].ravel() != 0)


def solve_characteristic_root(kernel: "PerturbedKernel", eps, i: int = 1, arith: str = "float"):
    """Non-negative root of ``phi_ii(eps)(rho) = 1``.

    Bracketed on ``[0, 0.999 rho*]`` with ``rho*`` the convergence abscissa of
    the return-time mgf, refined by Brent's method and polished by Newton steps
    with derivative ``phi_ii(rho, 1)``.

    Parameters
    ----------
    arith : {"float", "exact", "mp"}
        ``"exact"`` returns ``0`` or an :class:`ExactLog` whose base is verified
        to satisfy the equation exactly; ``"mp"`` polishes at high precision and
        returns an ``mpmath.mpf``.

    Raises
    ------
    RootNotFound
        If ``phi_ii`` stays below 1 up to the abscissa, or the residual cannot
        be brought below ``1e-12``.
    """
    numerics.check_arith(arith)
    moments._check_states(kernel, i)
    if _no_absorption(kernel, eps):
        return Fraction(0) if arith == "exact" else numerics.convert(0, arith)
    rho = _float_root(kernel, float(eps), i)
    if arith == "float":
        return rho
    if arith == "mp":
        with numerics.precision("mp"):
            x = mpmath.mpf(rho)
            for _ in range(8):
                vals = moments.hitting_mgf_mixed(kernel, eps, x, i, 1, "mp")
                step = (vals[0][i - 1] - 1) / vals[1][i - 1]
                x = x - step
                if abs(step) < mpmath.mpf(10) ** (-numerics.MP_DPS + 5):
                    break
            return x
    base = Fraction(math.exp(rho)).limit_denominator(EXACT_DENOM)
    cand = ExactLog(base)
    if _phi(kernel, eps, cand, i, "exact") != 1:
        raise IrrationalRootError(
            f"exact mode: exp(rho) is not a rational with denominator <= {EXACT_DENOM} "
            f"(float root {rho!r}); use the float or mp backend"
        )
    return cand


def _float_root(kernel, eps: float, i: int) -> float:
    f0 = _phi(kernel, eps, 0.0, i) - 1.0
    if f0 >= 0:
        return 0.0
    top = moments.spectral_abscissa(kernel, eps, i)
    hi = 0.999 * top
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fhi = _phi(kernel, eps, hi, i) - 1.0
    if fhi < 0:
        raise RootNotFound(
            f"no root below the abscissa at eps={eps}: the return-time mgf of state {i} "
            f"is {fhi + 1:.6g} < 1 at rho={hi:.6g}"
        )
    rho = optimize.brentq(lambda x: _phi(kernel, eps, x, i) - 1.0, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    best, best_res = rho, abs(_phi(kernel, eps, rho, i) - 1.0)
    for _ in range(4):
        vals = moments.hitting_mgf_mixed(kernel, eps, rho, i, 1)
        rho = rho - (vals[0][i - 1] - 1.0) / vals[1][i - 1]
        res = abs(_phi(kernel, eps, rho, i) - 1.0)
        if res < best_res:
            best, best_res = rho, res
        if res == 0:
            break
    if best_res > ROOT_TOL:
        raise RootNotFound(f"root polish did not converge at eps={eps}: residual {best_res:.3g}")
    return float(best)


# moment series


def transition_moment_series(kernel: "PerturbedKernel", rho0, r: int, k: int, arith: str = "float") -> MatrixEpsSeries:
    """Exact eps-expansion of ``p_ij(eps)(rho0, r)``; rows 1..N, columns 0..N.

    Entries are polynomials in eps, so the coefficients are exact and the
    expansion is zero-padded up to order ``k``.
    """
    numerics.check_arith(arith)
    with numerics.precision(arith):
        tensor = kernel.coefficient_tensor(arith)[:, 1:]
        w = moments.exp_weights(kernel, rho0, r, arith)
        out = numerics.zeros((k + 1, kernel.num_states, kernel.num_states + 1), arith)
        for d in range(min(k, tensor.shape[0] - 1) + 1):
            out[d] = tensor[d] @ w if arith == "float" else np.dot(tensor[d], w)
    return MatrixEpsSeries(out)


def _split_target(series: MatrixEpsSeries, j: int) -> tuple[MatrixEpsSeries, MatrixEpsSeries]:
    """``(jP, p_j)``: taboo block with column j zeroed, and column j as N x 1."""
    c = series.coeffs
    block = np.array(c[:, :, 1:], copy=True)
    block[:, :, j - 1] = 0 * c[0, 0, 0]
    return MatrixEpsSeries(block), MatrixEpsSeries(np.array(c[:, :, j : j + 1], copy=True))


def hitting_moment_series(kernel: "PerturbedKernel", rho0, j: int, k: int, arith: str = "float") -> list:
    """Expansions of ``Phi_j(eps)(rho0, r)`` for r = 0..k.

    Entry ``r`` is an N x 1 :class:`MatrixEpsSeries` of order ``k - r``.
    ``U = (I - jP)^{-1}`` is expanded by the Neumann recursion, and

        lambda_r = p_j(r) + sum_{m=1..r} C(r, m) jP(m) Phi(r - m),
        Phi(r)   = U lambda_r

    are multiplied out as series.

    Raises
    ------
    moments.FinitenessError
        If the taboo matrix at eps = 0 has spectral radius >= 1 at ``rho0``.
    """
    numerics.check_arith(arith)
    moments._check_states(kernel, j)
    moments._check_finite_at(kernel, 0.0, rho0, j, ())
    mats, vecs = [], []
    for r in range(k + 1):
        m, v = _split_target(transition_moment_series(kernel, rho0, r, k, arith), j)
        mats.append(m)
        vecs.append(v)
    with numerics.precision(arith):
        try:
            u = series_neumann_inverse(mats[0])
        except SingularSeriesError as exc:
            raise moments.FinitenessError(f"I - jP(rho0) is singular at eps=0 for target {j}") from exc
        phis = [series_mul(u, vecs[0])]
        for r in range(1, k + 1):
            lam = vecs[r].truncate(k - r)
            for m in range(1, r + 1):
                term = series_mul(mats[m], phis[r - m])
                lam = series_add(lam, series_scale(int(comb(r, m, exact=True)), term))
            phis.append(series_mul(u.truncate(k - r), lam))
    return phis


def b_table(kernel: "PerturbedKernel", rho0, i: int, k: int, arith: str = "float") -> list:
    """``b[r][n]`` for r = 0..k and n = 0..k-r, for reference state ``i``."""
    phis = hitting_moment_series(kernel, rho0, i, k, arith)
    return [list(phis[r].coeffs[:, i - 1, 0]) for r in range(k + 1)]


# coefficient recursion


@dataclass(frozen=True)
class Dmq:
    """Non-negative ``(n_1, ..., n_{q-1})`` with ``sum n_p = m`` and ``sum p n_p = q``."""

    m: int
    q: int
    solutions: tuple


def enumerate_Dmq(m: int, q: int) -> Dmq:
    """All solutions in lexicographic order, by bounded depth-first search."""
    if not 1 <= m <= q:
        raise ValueError(f"need 1 <= m <= q, got m={m}, q={q}")
    found = []
    width = q - 1

    def dfs(p, left_m, left_q, acc):
        # choose n_p for p = width, width-1, ..., 1
        if p == 0:
            if left_m == 0 and left_q == 0:
                found.append(tuple(reversed(acc)))
            return
        for n_p in range(min(left_m, left_q // p) + 1):
            # remaining p' < p contribute at most (p-1) per unit of m
            rest_m, rest_q = left_m - n_p, left_q - p * n_p
            if rest_q > (p - 1) * rest_m or rest_q < rest_m:
                continue
            dfs(p - 1, rest_m, rest_q, acc + [n_p])

    dfs(width, m, q, [])
    return Dmq(m, q, tuple(sorted(found)))


def _dmq_weight(dmq: Dmq, c: list, one):
    total = 0 * one
    for sol in dmq.solutions:
        term = one
        for p, n_p in enumerate(sol, start=1):
            if n_p:
                term = term * c[p - 1] ** n_p / math.factorial(n_p)
        total = total + term
    return total


def root_expansion(b: list, k: int) -> list:
    """Coefficients ``c_1..c_k`` of the root from the table ``b[r][n]``.

    ``c_1 = -b[0][1] / b[1][0]`` and for n >= 2

        c_n = -(b[0][n] + sum_{q<n} b[1][n-q] c_q
               + sum_{m=2..n} sum_{q=m..n} b[m][n-q] sum_{D_mq} prod_p c_p^{n_p} / n_p!) / b[1][0].

    Exact when ``b`` holds Fractions.
    """
    if k == 0:
        return []
    lead = b[1][0]
    if not lead > 0:
        raise ValueError(f"degenerate model: mean weighted return time b[1][0] = {lead!r} is not positive")
    one = lead / lead
    c = []
    for n in range(1, k + 1):
        acc = b[0][n]
        for q in range(1, n):
            acc = acc + b[1][n - q] * c[q - 1]
        for m in range(2, n + 1):
            for q in range(m, n + 1):
                acc = acc + b[m][n - q] * _dmq_weight(enumerate_Dmq(m, q), c, one)
        c.append(-acc / lead)
    return c


# limiting constants


def quasi_stationary_limits(
    kernel: "PerturbedKernel", rho0, i: int, arith: str = "float", horizon: int | None = None
) -> tuple[np.ndarray, dict]:
    """Row ``pi_i.`` of the limits and a diagnostics dict.

    ``pi_ij = omega_ij / phi_ii(rho0, 1)`` at eps = 0, where ``omega_ij`` is the
    discounted occupation of ``j`` within one return cycle of ``i``. It is
    computed as ``a_ij w_j(rho0)`` from the taboo occupation matrix and the
    mean discounted sojourn, and independently as a truncated sum over the
    exact occupation probabilities from :mod:`pertsmp.renewal`.

    Raises
    ------
    ConsistencyError
        If the two routes differ by more than ``1e-8`` plus the certified tail.
    """
    moments._check_states(kernel, i)
    with numerics.precision(arith):
        den = moments.hitting_mgf_mixed(kernel, 0, rho0, i, 1, arith)[1][i - 1]
        occ = moments.taboo_occupation(kernel, 0, rho0, i, arith)[i - 1]
        w = moments.mean_sojourn_weights(kernel, 0, rho0, arith)
        omega = occ * w
        row = omega / den

    rho_f = float(rho0)
    n_max = horizon or renewal.auto_horizon(kernel, 0.0, i, rho_f)
    sol = renewal.renewal_solve(kernel, 0.0, i, n_max)
    omega_dp = renewal.discounted_sum(sol.h, rho_f)
    tail = renewal.weighted_tail_bound(kernel, 0.0, i, rho_f, n_max)
    gap = float(np.max(np.abs(np.asarray(omega, dtype=float) - omega_dp)))
    if gap > PI_TOL + tail:
        raise ConsistencyError(
            f"occupation sums disagree for state {i}: taboo formula vs truncated sum differ by {gap:.3g} "
            f"(tail bound {tail:.3g})"
        )
    return row, {"omega_gap": gap, "tail_bound": tail, "horizon": n_max, "denominator": float(den)}


# report


def _enc(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)
    return float(x)


def _dec(x):
    return Fraction(x) if isinstance(x, str) else float(x)


@dataclass
class RootExpansion:
    """Expansion ``rho(eps) = rho0 + c_1 eps + ... + c_k eps^k`` and the limits ``pi``.

    ``b`` maps each reference state to its table ``b[r][n]``; ``pi_tilde[i-1][j-1]``
    is the limit for initial state i and current state j. In the exact backend
    ``c``, ``b`` and ``pi_tilde`` hold Fractions and ``rho0_exp`` is the rational
    ``e^{rho0}``.
    """

    rho0: float
    c: list
    b: dict
    pi_tilde: list
    regime: str
    order: int
    ref_state: int = 1
    arith: str = "float"
    rho0_exp: Any = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def num_states(self) -> int:
        return len(self.pi_tilde)

    def rho(self, eps: float, order: int | None = None) -> float:
        order = self.order if order is None else order
        return float(self.rho0) + sum(float(cn) * eps**n for n, cn in enumerate(self.c[:order], start=1))

    def to_dict(self) -> dict:
        return {
            "rho0": float(self.rho0),
            "rho0_exp": None if self.rho0_exp is None else _enc(self.rho0_exp),
            "c": [_enc(x) for x in self.c],
            "b": {str(i): [[_enc(x) for x in row] for row in tab] for i, tab in self.b.items()},
            "pi_tilde": [[_enc(x) for x in row] for row in self.pi_tilde],
            "regime": self.regime,
            "order": self.order,
            "ref_state": self.ref_state,
            "arith": self.arith,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RootExpansion":
        return cls(
            rho0=float(d["rho0"]),
            rho0_exp=None if d.get("rho0_exp") is None else _dec(d["rho0_exp"]),
            c=[_dec(x) for x in d["c"]],
            b={int(i): [[_dec(x) for x in row] for row in tab] for i, tab in d["b"].items()},
            pi_tilde=[[_dec(x) for x in row] for row in d["pi_tilde"]],
            regime=d["regime"],
            order=int(d["order"]),
            ref_state=int(d.get("ref_state", 1)),
            arith=d.get("arith", "float"),
            diagnostics=dict(d.get("diagnostics", {})),
        )


def expand(kernel: "PerturbedKernel", k: int, ref_state: int = 1, arith: str = "float") -> RootExpansion:
    """Full expansion report for a validated kernel.

    Computes ``rho0`` at eps = 0, the ``b`` tables and coefficients from every
    reference state (the spread is recorded), and all rows of ``pi``.
    """
    if k < 0:
        raise ValueError("order must be >= 0")
    if arith not in ("float", "exact"):
        raise ValueError("expand supports the float and exact backends")
    moments._check_states(kernel, ref_state)
    n = kernel.num_states
    rho0 = solve_characteristic_root(kernel, 0, ref_state, arith)
    regime = "pseudo-stationary" if float(rho0) == 0 else "quasi-stationary"
    tables, coeffs = {}, {}
    for i in range(1, n + 1):
        tables[i] = b_table(kernel, rho0, i, k, arith)
        coeffs[i] = root_expansion(tables[i], k)
    c = coeffs[ref_state]
    spread = max((abs(float(a) - float(b)) for cs in coeffs.values() for a, b in zip(cs, c)), default=0.0)

    pi, omega_gap = [], 0.0
    for i in range(1, n + 1):
        row, diag = quasi_stationary_limits(kernel, rho0, i, arith)
        pi.append(list(row))
        omega_gap = max(omega_gap, diag["omega_gap"])

    residual = abs(float(_phi(kernel, 0, rho0, ref_state, arith)) - 1.0)
    roots = [float(solve_characteristic_root(kernel, 0, i)) for i in range(1, n + 1)]
    diagnostics = {
        "root_residual": residual,
        "root_spread": max(roots) - min(roots),
        "coefficient_spread": spread,
        "omega_gap": omega_gap,
        "abscissa": moments.spectral_abscissa(kernel, 0.0, ref_state),
    }
    if arith == "float":
        c = [float(x) for x in c]
        tables = {i: [[float(x) for x in row] for row in tab] for i, tab in tables.items()}
        pi = [[float(x) for x in row] for row in pi]
    return RootExpansion(
        rho0=float(rho0),
        rho0_exp=rho0.base if isinstance(rho0, ExactLog) else (Fraction(1) if arith == "exact" else None),
        c=c,
        b=tables,
        pi_tilde=pi,
        regime=regime,
        order=k,
        ref_state=ref_state,
        arith=arith,
        diagnostics=diagnostics,
    )


def asymptotic_predict(rx: RootExpansion, i: int, j: int, eps: float, n: int, r: int) -> float:
    """``pi_ij exp(-(rho0 + c_1 eps + ... + c_{r-1} eps^{r-1}) n - (eps^r n) c_r)``."""
    if not 1 <= r <= rx.order:
        raise ValueError(f"r must be in 1..{rx.order}, got {r}")
    if not (1 <= i <= rx.num_states and 1 <= j <= rx.num_states):
        raise ValueError(f"states must be in 1..{rx.num_states}")
    lam = eps**r * n
    expo = -rx.rho(eps, r - 1) * n - lam * float(rx.c[r - 1])
    return float(rx.pi_tilde[i - 1][j - 1]) * math.exp(expo)
