"""Arithmetic backends shared by the analytic modules.

Three backends are supported, selected by name everywhere an ``arith``
argument appears:

``"float"``
    numpy float64 arrays; dense solves go through LAPACK (scipy).
``"exact"``
    ``fractions.Fraction`` entries in object arrays; solves by Gaussian
    elimination. Exponential weights ``e^{rho k}`` are only representable
    when ``e^rho`` is rational, which is expressed with :class:`ExactLog`.
``"mp"``
    ``mpmath.mpf`` entries in object arrays at :data:`MP_DPS` digits.
"""

from __future__ import annotations

import contextlib
import math
import warnings
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np
from scipy import linalg as sla

ARITHS = ("float", "exact", "mp")
MP_DPS = 60
COND_WARN = 1e12


class ExactLog:
    """The real number ``log(base)`` for a positive rational ``base``.

    Lets the exact backend carry a decay rate whose exponential is rational,
    e.g. ``ExactLog(2)`` stands for ``ln 2`` and yields weights ``2**k``.
    """

    __slots__ = ("base",)

    def __init__(self, base):
        base = Fraction(base)
        if base <= 0:
            raise ValueError("ExactLog base must be positive")
        self.base = base

    def __float__(self) -> float:
        return math.log(self.base.numerator) - math.log(self.base.denominator)

    def __eq__(self, other):
        if isinstance(other, ExactLog):
            return self.base == other.base
        return NotImplemented

    def __hash__(self):
        return hash(("ExactLog", self.base))

    def __repr__(self):
        return f"ExactLog({self.base})"


def check_arith(arith: str) -> None:
    if arith not in ARITHS:
        raise ValueError(f"unknown arithmetic backend {arith!r}; expected one of {ARITHS}")


def to_fraction(value) -> Fraction:
    """Exact rational for a model coefficient.

    Floats are read through their shortest repr so that ``0.1`` becomes 1/10,
    i.e. the decimal the model author wrote.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("boolean is not a valid coefficient")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite coefficient")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    return Fraction(value)


def convert(value, arith: str):
    """Convert a scalar into the backend's number type."""
    if arith == "float":
        return float(value)
    if arith == "exact":
        return to_fraction(value)
    if isinstance(value, Fraction):
        return mpmath.mpf(value.numerator) / value.denominator
    if isinstance(value, str):
        return convert(to_fraction(value), "mp")
    return mpmath.mpf(value)


def asarray(values, arith: str) -> np.ndarray:
    """Array of backend numbers (float64 or object dtype)."""
    if arith == "float":
        return np.asarray(values, dtype=float)
    src = np.asarray(values, dtype=object)
    out = np.empty(src.shape, dtype=object)
    for idx, v in np.ndenumerate(src):
        out[idx] = convert(v, arith)
    return out


def zeros(shape, arith: str) -> np.ndarray:
    if arith == "float":
        return np.zeros(shape)
    return asarray(np.zeros(shape, dtype=int), arith)


def eye(n: int, arith: str) -> np.ndarray:
    if arith == "float":
        return np.eye(n)
    return asarray(np.eye(n, dtype=int), arith)


def exp_base(rho, arith: str):
    """``e^rho`` in the backend.

    In exact arithmetic ``rho`` must be zero or an :class:`ExactLog`.
    """
    if isinstance(rho, ExactLog):
        return convert(rho.base, arith) if arith != "float" else float(rho.base)
    if arith == "float":
        return math.exp(float(rho))
    if arith == "mp":
        return mpmath.exp(rho if isinstance(rho, mpmath.mpf) else convert(rho, "mp"))
    if rho == 0:
        return Fraction(1)
    raise ValueError(
        "exact arithmetic needs rho = 0 or an ExactLog with rational exp(rho); "
        f"got {rho!r}"
    )


def precision(arith: str):
    """Context manager raising mpmath's working precision for the mp backend."""
    if arith == "mp":
        return mpmath.workdps(MP_DPS)
    return contextlib.nullcontext()


def _solve_object(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting on object arrays."""
    n = a.shape[0]
    m = np.array(a, dtype=object, copy=True)
    rhs = np.array(b, dtype=object, copy=True)
    vector = rhs.ndim == 1
    if vector:
        rhs = rhs.reshape(n, 1)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r, col]))
        if m[piv, col] == 0:
            raise np.linalg.LinAlgError("singular matrix")
        if piv != col:
            m[[col, piv]] = m[[piv, col]]
            rhs[[col, piv]] = rhs[[piv, col]]
        p = m[col, col]
        for r in range(col + 1, n):
            f = m[r, col] / p
            if f != 0:
                m[r, col:] = m[r, col:] - f * m[col, col:]
                rhs[r] = rhs[r] - f * rhs[col]
    x = np.empty_like(rhs)
    for r in range(n - 1, -1, -1):
        acc = rhs[r].copy()
        for c in range(r + 1, n):
            acc = acc - m[r, c] * x[c]
        x[r] = acc / m[r, r]
    return x.reshape(n) if vector else x


def solve(a: np.ndarray, b: np.ndarray, arith: str) -> np.ndarray:
    """Solve ``a x = b`` with partial pivoting in the given backend."""
    if arith == "float":
        a = np.asarray(a, dtype=float)
        if a.shape[0] == 0:
            return np.asarray(b, dtype=float).copy()
        lu = sla.lu_factor(a, check_finite=True)
        warn_if_ill_conditioned(a)
        return sla.lu_solve(lu, np.asarray(b, dtype=float))
    if a.shape[0] == 0:
        return np.array(b, dtype=object, copy=True)
    with precision(arith):
        return _solve_object(a, b)


def inv(a: np.ndarray, arith: str) -> np.ndarray:
    return solve(a, eye(a.shape[0], arith), arith)


def det(a: np.ndarray, arith: str):
    if arith == "float":
        return float(np.linalg.det(np.asarray(a, dtype=float))) if a.size else 1.0
    n = a.shape[0]
    m = np.array(a, dtype=object, copy=True)
    sign = 1
    d = convert(1, arith)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r, col]))
        if m[piv, col] == 0:
            return convert(0, arith)
        if piv != col:
            m[[col, piv]] = m[[piv, col]]
            sign = -sign
        d = d * m[col, col]
        for r in range(col + 1, n):
            f = m[r, col] / m[col, col]
            m[r, col:] = m[r, col:] - f * m[col, col:]
    return d if sign > 0 else -d


def warn_if_ill_conditioned(a: np.ndarray) -> None:
    cond = np.linalg.cond(a)
    if cond > COND_WARN:
        warnings.warn(f"ill-conditioned linear system (condition number {cond:.3g})", RuntimeWarning, stacklevel=3)


def spectral_radius(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def polyval(coeffs: Sequence, x):
    """Horner evaluation of ``sum c_m x^m``; works for any number type."""
    acc = 0 * x
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc
