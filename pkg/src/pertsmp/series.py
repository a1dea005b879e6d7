"""Truncated asymptotic expansions in a small parameter.

A series of order ``k`` is ``A_0 + A_1 eps + ... + A_k eps^k + o(eps^k)``;
coefficients beyond ``k`` are unknown, not zero, so every binary operation
returns the smaller of the two operand orders.

Coefficients live in a numpy array of shape ``(k + 1,) + shape`` whose dtype
is float64 or object (``Fraction`` / ``mpmath.mpf``), matching the
arithmetic backends in :mod:`pertsmp.numerics`.
"""

from __future__ import annotations


import mpmath
import numpy as np

from . import numerics


class SingularSeriesError(ArithmeticError):
    """The leading coefficient ``I - A_0`` of a Neumann inverse is singular."""


def _arith_of(arr: np.ndarray) -> str:
    if arr.dtype != object:
        return "float"
    # a single mpf entry promotes the whole array; ints and Fractions are exact
    return "mp" if any(isinstance(x, mpmath.mpf) for x in arr.flat) else "exact"


class MatrixEpsSeries:
    """Expansion of an ``m x n`` matrix-valued function of eps."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        arr = np.asarray(coeffs) if not isinstance(coeffs, np.ndarray) else coeffs
        if arr.dtype != object:
            arr = arr.astype(float)
        if arr.ndim != 3:
            raise ValueError(f"matrix series needs coefficients of shape (k+1, m, n), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("a series needs at least one coefficient")
        if arr.dtype != object and not np.all(np.isfinite(arr)):
            raise ValueError("series coefficients must be finite")
        self.coeffs = arr

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[1:]

    @property
    def arith(self) -> str:
        return _arith_of(self.coeffs)

    def __getitem__(self, n: int) -> np.ndarray:
        return self.coeffs[n]

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def truncate(self, order: int) -> "MatrixEpsSeries":
        if order > self.order:
            raise ValueError(f"cannot raise order {self.order} to {order}")
        return type(self)(self.coeffs[: order + 1])

    def evaluate(self, eps):
        """Numerical value of the truncated polynomial at ``eps``."""
        acc = self.coeffs[-1]
        for c in self.coeffs[-2::-1]:
            acc = acc * eps + c
        return acc

    def __repr__(self):
        return f"{type(self).__name__}(order={self.order}, shape={self.shape})"


class EpsSeries(MatrixEpsSeries):
    """Scalar expansion; stored as a 1x1 matrix series."""

    __slots__ = ()

    def __init__(self, coeffs):
        arr = np.asarray(coeffs, dtype=object if _is_object(coeffs) else float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1, 1)
        super().__init__(arr)
        if self.shape != (1, 1):
            raise ValueError("EpsSeries is scalar-valued")

    @property
    def values(self) -> list:
        return list(self.coeffs[:, 0, 0])

    def evaluate(self, eps):
        return super().evaluate(eps)[0, 0]


def _is_object(coeffs) -> bool:
    if isinstance(coeffs, np.ndarray):
        return coeffs.dtype == object
    flat = np.asarray(coeffs, dtype=object).ravel()
    return any(not isinstance(v, (float, int, np.floating, np.integer)) for v in flat)


def _wrap(like: MatrixEpsSeries, coeffs: np.ndarray) -> MatrixEpsSeries:
    if isinstance(like, EpsSeries) and coeffs.shape[1:] == (1, 1):
        return EpsSeries(coeffs)
    return MatrixEpsSeries(coeffs)


def constant(matrix, order: int, arith: str = "float") -> MatrixEpsSeries:
    """Series whose value does not depend on eps."""
    m = numerics.asarray(matrix, arith)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    out = numerics.zeros((order + 1,) + m.shape, arith)
    out[0] = m
    return MatrixEpsSeries(out)


def identity(n: int, order: int, arith: str = "float") -> MatrixEpsSeries:
    return constant(numerics.eye(n, arith), order, arith)


def series_scale(c, a: MatrixEpsSeries) -> MatrixEpsSeries:
    """``c * A(eps)``; order preserved."""
    return _wrap(a, c * a.coeffs)


def series_add(a: MatrixEpsSeries, b: MatrixEpsSeries) -> MatrixEpsSeries:
    """Coefficientwise sum, truncated to the smaller order."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    k = min(a.order, b.order)
    return _wrap(a, a.coeffs[: k + 1] + b.coeffs[: k + 1])


def series_sub(a: MatrixEpsSeries, b: MatrixEpsSeries) -> MatrixEpsSeries:
    return series_add(a, series_scale(-1, b))


def series_mul(a: MatrixEpsSeries, b: MatrixEpsSeries) -> MatrixEpsSeries:
    """Cauchy product ``C_i = sum_j A_j B_{i-j}``, truncated to the smaller order."""
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    k = min(a.order, b.order)
    out = []
    for i in range(k + 1):
        acc = a.coeffs[0] @ b.coeffs[i]
        for j in range(1, i + 1):
            acc = acc + a.coeffs[j] @ b.coeffs[i - j]
        out.append(acc)
    coeffs = np.stack(out) if a.coeffs.dtype != object else _stack_object(out)
    return _wrap(a if isinstance(b, EpsSeries) else b, coeffs)


def _stack_object(mats) -> np.ndarray:
    arr = np.empty((len(mats),) + mats[0].shape, dtype=object)
    for i, m in enumerate(mats):
        arr[i] = m
    return arr


def series_neumann_inverse(a: MatrixEpsSeries, rtol: float = 1e-12) -> MatrixEpsSeries:
    """Expansion of ``(I - A(eps))^{-1}`` of the same order as ``A``.

    ``C_0 = (I - A_0)^{-1}`` and ``C_i = C_0 sum_{j=1..i} A_j C_{i-j}``.
    """
    m, n = a.shape
    if m != n:
        raise ValueError("Neumann inverse needs a square series")
    arith = a.arith
    with numerics.precision(arith):
        lead = numerics.eye(n, arith) - a.coeffs[0]
        d = numerics.det(lead, arith)
        if arith == "exact":
            singular = d == 0
        else:
            scale = max(1.0, float(np.max(np.abs(np.asarray(lead, dtype=float))))) ** n if n else 1.0
            singular = abs(float(d)) <= rtol * scale
        if singular:
            raise SingularSeriesError("I - A_0 is singular; the inverse has no expansion")
        c0 = numerics.inv(lead, arith)
        cs = [c0]
        for i in range(1, a.order + 1):
            acc = a.coeffs[1] @ cs[i - 1]
            for j in range(2, i + 1):
                acc = acc + a.coeffs[j] @ cs[i - j]
            cs.append(c0 @ acc)
    coeffs = np.stack(cs) if arith == "float" else _stack_object(cs)
    return _wrap(a, coeffs)
