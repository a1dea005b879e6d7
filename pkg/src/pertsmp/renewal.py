"""Exact finite-horizon distributions by dynamic programming.

These routines are the ground truth for the analytic modules. They never
use the characteristic equation or any series expansion: everything is a
forward recursion over jump epochs,

    arrive[n, l] = sum_{m < n} sum_s arrive[m, s] Q_sl(n - m),

starting from ``arrive[0, i] = 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import moments

if TYPE_CHECKING:
    from .model import PerturbedKernel

SUPPORT_MASS_TOL = 1e-14
HORIZON_CAP = 2**16


class HorizonError(ValueError):
    """Requested horizon is shorter than the longest sojourn time."""


def convolve(f: Sequence[float], g: Sequence[float]) -> np.ndarray:
    """``(f * g)(n) = sum_{k=0..n} f(n-k) g(k)``; length is ``len(f) + len(g) - 1``."""
    return np.convolve(np.asarray(f, dtype=float), np.asarray(g, dtype=float))


def period_of(support) -> int:
    """gcd of a support set, or of the indices of an array with mass above 1e-14."""
    if isinstance(support, np.ndarray) or (isinstance(support, Sequence) and support and isinstance(support[0], float)):
        arr = np.asarray(support, dtype=float)
        support = [int(n) for n in np.flatnonzero(arr > SUPPORT_MASS_TOL) if n > 0]
    points = [int(n) for n in support]
    if not points:
        raise ValueError("empty support has no period")
    return math.gcd(*points)


def _q(kernel: "PerturbedKernel", eps) -> np.ndarray:
    return kernel.q_array(eps)


def _forward(q: np.ndarray, start: int, horizon: int, stop: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    """Jump-epoch densities from ``start``.

    Returns ``(arrive, hit)``: ``arrive[n, s]`` is the probability of jumping
    into a continuing state ``s`` at time n (with ``arrive[0, start] = 1``), and
    ``hit[n, s]`` the probability of first entering a stopping state ``s`` at n.
    Stopped states never emit further jumps.
    """
    n_states = q.shape[0]
    kmax = q.shape[2] - 1
    stop = sorted(set(stop))
    cont = np.ones(n_states, dtype=bool)
    cont[stop] = False
    arrive = np.zeros((horizon + 1, n_states))
    hit = np.zeros((horizon + 1, n_states))
    arrive[0, start] = 1.0
    # emitted[n] = mass leaving at epoch n that can still jump
    qk = [q[:, :, k] for k in range(kmax + 1)]
    for n in range(1, horizon + 1):
        acc = np.zeros(n_states)
        for k in range(1, min(kmax, n) + 1):
            src = arrive[n - k]
            if src.any():
                acc += src @ qk[k]
        hit[n] = np.where(cont, 0.0, acc)
        arrive[n] = np.where(cont, acc, 0.0)
    return arrive, hit


def _survival(q: np.ndarray) -> np.ndarray:
    """``S[s, t] = P(sojourn at s > t)`` for t = 0..K."""
    kmax = q.shape[2] - 1
    per_time = q.sum(axis=1)  # [s, k]
    tail = np.cumsum(per_time[:, ::-1], axis=1)[:, ::-1]  # sum_{k' >= k}
    surv = np.zeros((q.shape[0], kmax + 1))
    surv[:, :kmax] = tail[:, 1:]
    return surv


def _occupation(arrive: np.ndarray, surv: np.ndarray) -> np.ndarray:
    """``occ[n, s] = sum_{m <= n} arrive[m, s] S[s, n - m]``."""
    horizon = arrive.shape[0] - 1
    kmax = surv.shape[1] - 1
    occ = np.zeros_like(arrive)
    for t in range(0, kmax):
        occ[t:] += arrive[: horizon + 1 - t] * surv[:, t]
    return occ


def taboo_distributions(
    kernel: "PerturbedKernel", eps, i: int, taboo_set: Iterable[int], N_max: int, targets: Iterable[int] | None = None
) -> dict:
    """First-hitting-time laws from ``i`` avoiding ``{0} | taboo_set``.

    Returns ``{j: g}`` with ``g[n] = P_i(mu_j = n, hit j before 0 and taboo)``
    for ``n = 0..N_max`` and every target ``j`` outside the taboo set.
    """
    if N_max < kernel.max_time:
        raise HorizonError(f"horizon {N_max} shorter than the sojourn support {kernel.max_time}")
    q = _q(kernel, eps)
    taboo = {0, *taboo_set}
    if targets is None:
        targets = [j for j in range(1, kernel.num_states + 1) if j not in taboo]
    out = {}
    for j in targets:
        _, hit = _forward(q, i, N_max, taboo | {j})
        out[j] = hit[:, j].copy()
    return out


def return_time_support(kernel: "PerturbedKernel", eps, j: int, horizon: int | None = None) -> list[int]:
    """Exact support of the return-time law of ``j`` (avoiding 0) up to ``horizon``.

    Computed on the boolean positivity pattern of the kernel, so no mass
    threshold is involved.
    """
    q = _q(kernel, eps) > 0
    n_states = q.shape[0]
    kmax = q.shape[2] - 1
    if horizon is None:
        horizon = max(200, 4 * kernel.num_states * kmax)
    cont = np.ones(n_states, dtype=bool)
    cont[[0, j]] = False
    arrive = np.zeros((horizon + 1, n_states), dtype=bool)
    arrive[0, j] = True
    support = []
    for n in range(1, horizon + 1):
        acc = np.zeros(n_states, dtype=bool)
        for k in range(1, min(kmax, n) + 1):
            src = arrive[n - k]
            if src.any():
                acc |= (src[:, None] & q[:, :, k]).any(axis=0)
        if acc[j]:
            support.append(n)
        arrive[n] = acc & cont
    return support


@dataclass
class RenewalSolution:
    """Exact arrays for one initial state ``i`` at one ``eps``.

    ``g`` is the return-time law of ``i`` avoiding 0; ``h[:, j-1]`` and
    ``P[:, j-1]`` are ``h_ij(n)`` and ``P_ij(n)``; ``absorbed[n]`` is
    ``P_i(mu_0 <= n)``. ``alive[n] = P_i(mu_0 and mu_i > n)``.
    ``tail_bound`` bounds ``sum_{n > N_max} alive(n)``.
    """

    horizon: int
    eps: float
    i: int
    g: np.ndarray
    h: np.ndarray
    P: np.ndarray
    P_direct: np.ndarray
    absorbed: np.ndarray
    alive: np.ndarray
    tail_bound: float

    def weighted_tail_bound(self, kernel: "PerturbedKernel", rho: float) -> float:
        return weighted_tail_bound(kernel, self.eps, self.i, rho, self.horizon)

    @property
    def route_gap(self) -> float:
        """Largest entrywise difference between the renewal and direct routes."""
        return float(np.max(np.abs(self.P - self.P_direct)))

    def columns(self) -> list[str]:
        n = self.P.shape[1]
        return ["n", "g"] + [f"h_{j}" for j in range(1, n + 1)] + [f"P_{j}" for j in range(1, n + 1)] + ["absorbed"]

    def rows(self) -> list[list]:
        """One row ``(n, g(n), h_.(n), P_.(n), absorbed(n))`` per time step."""
        return [
            [n, float(self.g[n]), *map(float, self.h[n]), *map(float, self.P[n]), float(self.absorbed[n])]
            for n in range(self.horizon + 1)
        ]

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for row in self.rows():
                writer.writerow([row[0]] + [f"{x:.17g}" for x in row[1:]])


def renewal_solve(kernel: "PerturbedKernel", eps, i: int, N_max: int) -> RenewalSolution:
    """``P_ij(n)`` by the renewal equation, cross-checked by a direct recursion.

    The renewal route builds ``g_ii`` and ``h_ij`` from taboo recursions and
    solves ``P = h + P * g``. The direct route propagates jump epochs with
    only state 0 stopping and reads occupation at time n off the residual
    sojourn. Both are returned; they must agree to rounding.
    """
    if N_max < 1:
        raise HorizonError("horizon must be >= 1")
    if N_max < kernel.max_time:
        raise HorizonError(f"horizon {N_max} shorter than the sojourn support {kernel.max_time}")
    q = _q(kernel, eps)
    surv = _survival(q)
    n = kernel.num_states

    arrive_t, hit_t = _forward(q, i, N_max, {0, i})
    g = hit_t[:, i].copy()
    h = _occupation(arrive_t, surv)[:, 1:]
    alive = h.sum(axis=1)

    P = np.zeros((N_max + 1, n))
    for m in range(N_max + 1):
        acc = h[m].copy()
        ks = np.arange(1, m + 1)
        if m:
            acc += g[ks] @ P[m - ks]
        P[m] = acc

    arrive_d, hit_d = _forward(q, i, N_max, {0})
    P_direct = _occupation(arrive_d, surv)[:, 1:]
    absorbed = np.cumsum(hit_d[:, 0])

    return RenewalSolution(
        horizon=N_max,
        eps=eps,
        i=i,
        g=g,
        h=h,
        P=P,
        P_direct=P_direct,
        absorbed=absorbed,
        alive=alive,
        tail_bound=weighted_tail_bound(kernel, eps, i, 0.0, N_max),
    )


def weighted_tail_bound(kernel: "PerturbedKernel", eps, i: int, rho: float, N_max: int) -> float:
    """Bound on ``sum_{n > N_max} e^{rho n} P_i(mu_0 and mu_i > n)``.

    For any theta in (rho, abscissa) the full sum ``S(theta) = sum_n e^{theta n}
    alive(n)`` equals ``(E_i e^{theta (mu_0 min mu_i)} - 1) / (e^theta - 1)``,
    so the tail is at most ``e^{-(theta - rho)(N_max + 1)} S(theta)``.
    Returns ``inf`` when ``rho`` is not below the abscissa.
    """
    top = moments.spectral_abscissa(kernel, eps, i)
    if rho >= top:
        return math.inf
    theta = rho + min(0.5 * (top - rho), 5.0)
    both = moments.hitting_mgf(kernel, eps, theta, i)[i - 1] + moments.absorption_mgf(kernel, eps, theta, i)[i - 1]
    s_theta = (both - 1.0) / math.expm1(theta)
    return float(math.exp(-(theta - rho) * (N_max + 1)) * s_theta)


def discounted_sum(values: np.ndarray, rho: float, r: int = 0):
    """``sum_n n^r e^{rho n} values[n]`` along axis 0.

    Terms are formed as ``exp(rho n + log v)`` so that a large ``e^{rho n}``
    against an underflowed probability gives 0 rather than ``inf * 0``.
    """
    values = np.asarray(values, dtype=float)
    n = np.arange(values.shape[0]).reshape((-1,) + (1,) * (values.ndim - 1))
    pos = values > 0
    with np.errstate(divide="ignore"):
        logv = np.where(pos, np.log(np.where(pos, values, 1.0)), -np.inf)
    terms = np.where(pos, np.exp(rho * n + logv), 0.0) * n.astype(float) ** r
    out = terms.sum(axis=0)
    return float(out) if values.ndim == 1 else out


def default_horizon(kernel: "PerturbedKernel") -> int:
    return max(200, 20 * kernel.max_time)


def auto_horizon(kernel: "PerturbedKernel", eps, i: int, rho: float, target: float = 1e-10) -> int:
    """Double the horizon until the discounted tail bound drops below ``target``."""
    horizon = default_horizon(kernel)
    while weighted_tail_bound(kernel, eps, i, rho, horizon) >= target and horizon < HORIZON_CAP:
        horizon *= 2
    return min(horizon, HORIZON_CAP)
