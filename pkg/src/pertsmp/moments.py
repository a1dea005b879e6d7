"""Power-exponential moments of transition and first-hitting times.

All quantities are evaluated at a fixed ``(eps, rho)``. Hitting-time moment
generating functions solve the first-jump linear systems

    Phi_j(rho) = p_j(rho) + jP(rho) Phi_j(rho),

where ``jP`` is the embedded transition-mgf matrix over states ``1..N`` with
column ``j`` zeroed. The solution is finite exactly when the Neumann series
``I + jP + jP^2 + ...`` converges, i.e. when the spectral radius of ``jP`` is
below one; that is the test used here before any solve.

State labels are 1-based (``1..N``); returned vectors are indexed ``0..N-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.special import comb

from . import numerics

if TYPE_CHECKING:
    from .model import PerturbedKernel

RHO_CAP = 50.0
ABSCISSA_TOL = 1e-12


class FinitenessError(ArithmeticError):
    """The requested hitting-time mgf is infinite at this rho."""


class HypothesisError(ValueError):
    """Inputs violate a precondition of an identity being checked."""


@dataclass
class TransitionMoments:
    eps: float
    rho: float
    r: int
    values: np.ndarray  # N x (N+1): rows i=1..N, columns j=0..N


@dataclass
class MomentSystem:
    target: int
    taboo: tuple
    p: np.ndarray
    taboo_matrix: np.ndarray
    solution: list
    lam: list = field(default_factory=list)


def exp_weights(kernel: "PerturbedKernel", rho, r: int, arith: str) -> np.ndarray:
    """``k^r e^{rho k}`` for k = 0..K in the backend."""
    kmax = kernel.max_time
    if arith == "float":
        k = np.arange(kmax + 1, dtype=float)
        with np.errstate(over="ignore"):
            return k**r * np.exp(float(rho) * k)
    x = numerics.exp_base(rho, arith)
    out = np.empty(kmax + 1, dtype=object)
    xk = numerics.convert(1, arith)
    for k in range(kmax + 1):
        out[k] = (k**r if r else 1) * xk
        xk = xk * x
    return out


def moment_matrix(kernel: "PerturbedKernel", eps, rho, r: int = 0, arith: str = "float") -> np.ndarray:
    """``p_ij(eps)(rho, r) = sum_k k^r e^{rho k} Q_ij(eps)(k)``; rows 1..N, columns 0..N."""
    with numerics.precision(arith):
        q = kernel.q_array(eps, arith)[1:]
        w = exp_weights(kernel, rho, r, arith)
        if arith == "float":
            return q @ w
        return np.dot(q, w)


def transition_moments(kernel: "PerturbedKernel", eps, rho, r: int = 0, arith: str = "float") -> TransitionMoments:
    return TransitionMoments(eps=eps, rho=rho, r=r, values=moment_matrix(kernel, eps, rho, r, arith))


def taboo_matrix(p: np.ndarray, j: int, taboo: Sequence[int] = ()) -> np.ndarray:
    """N x N block of ``p`` (columns 1..N) with columns ``j`` and ``taboo`` zeroed."""
    m = np.array(p[:, 1:], copy=True)
    for s in (j, *taboo):
        m[:, s - 1] = 0
    return m


def _check_states(kernel: "PerturbedKernel", *states: int) -> None:
    for s in states:
        if not 1 <= s <= kernel.num_states:
            raise ValueError(f"state {s} is not a non-absorbing state 1..{kernel.num_states}")


def spectral_abscissa(
    kernel: "PerturbedKernel",
    eps,
    j: int,
    taboo: Sequence[int] = (),
    rho_cap: float = RHO_CAP,
    tol: float = ABSCISSA_TOL,
) -> float:
    """``sup{rho : spectral radius of jP(eps)(rho) < 1}`` by bisection.

    When the taboo matrix is nilpotent the supremum is infinite; the cap is
    returned instead. The cap is lowered for long sojourn supports so that
    ``e^{rho K}`` stays within double range.
    """
    _check_states(kernel, j, *taboo)
    cap = min(rho_cap, 700.0 / kernel.max_time)
    q = kernel.q_array(eps)[1:]

    def radius(rho):
        p = q @ exp_weights(kernel, rho, 0, "float")
        return numerics.spectral_radius(taboo_matrix(p, j, taboo))

    if radius(cap) < 1:
        return cap
    lo = 0.0
    if radius(lo) >= 1:
        lo = -cap
        if radius(lo) >= 1:
            raise FinitenessError(f"taboo matrix for target {j} is not substochastic at any rho")
    hi = cap
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if radius(mid) < 1:
            lo = mid
        else:
            hi = mid
    return lo


@lru_cache(maxsize=4096)
def _factorized(kernel: "PerturbedKernel", eps: float, rho: float, j: int, taboo: tuple):
    p0 = moment_matrix(kernel, eps, rho, 0)
    tm = taboo_matrix(p0, j, taboo)
    radius = numerics.spectral_radius(tm)
    if not radius < 1:
        raise FinitenessError(
            f"hitting-time mgf for target {j} is infinite at rho={rho}: the taboo "
            f"transition-mgf matrix has spectral radius {radius:.6g} >= 1, so "
            "I - jP(rho) has no non-negative inverse"
        )
    a = np.eye(kernel.num_states) - tm
    numerics.warn_if_ill_conditioned(a)
    lu = sla.lu_factor(a)
    return p0, tm, lu


def _check_finite_at(kernel, eps, rho, j, taboo) -> None:
    """Spectral-radius test in float for the non-float backends."""
    _factorized(kernel, float(eps), float(rho), j, tuple(taboo))


def _solver(kernel, eps, rho, j, taboo, arith):
    """Return ``(p(rho,0), jP(rho), solve)`` for the system at (eps, rho)."""
    if arith == "float":
        p0, tm, lu = _factorized(kernel, float(eps), float(rho), j, tuple(taboo))
        return p0, tm, lambda b: sla.lu_solve(lu, b)
    _check_finite_at(kernel, eps, rho, j, taboo)
    p0 = moment_matrix(kernel, eps, rho, 0, arith)
    tm = taboo_matrix(p0, j, taboo)
    a = numerics.eye(kernel.num_states, arith) - tm
    return p0, tm, lambda b: numerics.solve(a, b, arith)


def moment_system(
    kernel: "PerturbedKernel", eps, rho, j: int, r_max: int = 0, taboo: Sequence[int] = (), arith: str = "float"
) -> MomentSystem:
    """Solve the hitting-time systems for target ``j`` and orders ``0..r_max``.

    Orders above zero use the differentiated system with right-hand side
    ``lambda_j(rho, r) = p_j(rho, r) + sum_{m=1..r} C(r, m) jP(rho, m) Phi_j(rho, r - m)``.
    """
    numerics.check_arith(arith)
    _check_states(kernel, j, *taboo)
    with numerics.precision(arith):
        p0, tm, solve = _solver(kernel, eps, rho, j, taboo, arith)
        phis = [solve(p0[:, j])]
        lams = [p0[:, j]]
        mats = {0: tm}
        vecs = {0: p0[:, j]}
        for r in range(1, r_max + 1):
            pr = moment_matrix(kernel, eps, rho, r, arith)
            mats[r] = taboo_matrix(pr, j, taboo)
            vecs[r] = pr[:, j]
            lam = vecs[r]
            for m in range(1, r + 1):
                lam = lam + int(comb(r, m, exact=True)) * (mats[m] @ phis[r - m])
            lams.append(lam)
            phis.append(solve(lam))
    return MomentSystem(target=j, taboo=tuple(taboo), p=vecs[0], taboo_matrix=tm, solution=phis, lam=lams)


def hitting_mgf(kernel: "PerturbedKernel", eps, rho, j: int, arith: str = "float") -> np.ndarray:
    """``Phi_j(eps)(rho)``: entry i is ``E_i e^{rho mu_j}; nu_0 > nu_j``."""
    return moment_system(kernel, eps, rho, j, 0, (), arith).solution[0]


def hitting_mgf_mixed(kernel: "PerturbedKernel", eps, rho, j: int, r_max: int, arith: str = "float") -> list:
    """``[Phi_j(rho, r) for r = 0..r_max]`` with ``Phi_j(rho, r)_i = E_i mu_j^r e^{rho mu_j}; nu_0 > nu_j``."""
    return moment_system(kernel, eps, rho, j, r_max, (), arith).solution


def taboo_hitting_mgf(
    kernel: "PerturbedKernel", eps, rho, j: int, taboo: Sequence[int], arith: str = "float"
) -> np.ndarray:
    """mgf of the hitting time of ``j`` on paths that also avoid ``taboo`` before ``j``."""
    return moment_system(kernel, eps, rho, j, 0, tuple(taboo), arith).solution[0]


def absorption_mgf(kernel: "PerturbedKernel", eps, rho, j: int, arith: str = "float") -> np.ndarray:
    """``E_i e^{rho mu_0}; nu_0 < nu_j`` for i = 1..N."""
    numerics.check_arith(arith)
    _check_states(kernel, j)
    with numerics.precision(arith):
        p0, _, solve = _solver(kernel, eps, rho, j, (), arith)
        return solve(p0[:, 0])


def taboo_occupation(kernel: "PerturbedKernel", eps, rho, j: int, arith: str = "float") -> np.ndarray:
    """``(I - jP(rho))^{-1}``: discounted expected visits before hitting 0 or j."""
    with numerics.precision(arith):
        _, _, solve = _solver(kernel, eps, rho, j, (), arith)
        return solve(numerics.eye(kernel.num_states, arith))


def solidarity_check(kernel: "PerturbedKernel", eps, rho, i: int, j: int) -> float:
    """Residual of ``(1 - phi_ii)(1 - iphi_jj) = (1 - phi_jj)(1 - jphi_ii)``.

    Here ``iphi_jj`` is the return mgf of ``j`` on paths avoiding ``i``. The
    identity requires ``phi_ii(rho) <= 1``; otherwise :class:`HypothesisError`.
    """
    _check_states(kernel, i, j)
    if i == j:
        return 0.0
    phi_ii = hitting_mgf(kernel, eps, rho, i)[i - 1]
    if phi_ii > 1 + 1e-12:
        raise HypothesisError(f"phi_{i}{i}(rho={rho}) = {phi_ii!r} exceeds 1")
    phi_jj = hitting_mgf(kernel, eps, rho, j)[j - 1]
    i_phi_jj = taboo_hitting_mgf(kernel, eps, rho, j, (i,))[j - 1]
    j_phi_ii = taboo_hitting_mgf(kernel, eps, rho, i, (j,))[i - 1]
    return abs((1 - phi_ii) * (1 - i_phi_jj) - (1 - phi_jj) * (1 - j_phi_ii))


def mean_sojourn_weights(kernel: "PerturbedKernel", eps, rho, arith: str = "float") -> np.ndarray:
    """``w_j(rho) = E_j sum_{t < kappa} e^{rho t}`` for j = 1..N.

    Equal to ``(sum_l p_jl(rho) - 1) / (e^rho - 1)``; evaluated as the finite
    geometric sum so there is no removable singularity at ``rho = 0``.
    """
    with numerics.precision(arith):
        q = kernel.q_array(eps, arith)[1:]
        kmax = kernel.max_time
        x = numerics.exp_base(rho, arith)
        geo = []
        acc = numerics.convert(0, arith)
        xt = numerics.convert(1, arith)
        for k in range(kmax + 1):
            geo.append(acc)  # sum_{t<k} x^t
            acc = acc + xt
            xt = xt * x
        geo = numerics.asarray(geo, arith) if arith != "float" else np.asarray(geo, dtype=float)
        return q.sum(axis=1) @ geo if arith == "float" else np.dot(q.sum(axis=1), geo)


def clear_cache() -> None:
    _factorized.cache_clear()

