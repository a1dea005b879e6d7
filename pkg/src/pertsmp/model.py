"""Perturbed discrete-time semi-Markov kernels with one absorbing state.

A kernel holds transition probabilities ``Q_ij(eps)(k)`` for states
``i = 1..N`` (non-absorbing), ``j = 0..N`` and sojourn times ``k >= 1``.
Each probability is a polynomial in the perturbation parameter ``eps``,
stored as its coefficient list ``[c0, c1, ...]``.

State 0 is absorbing; its outgoing law is irrelevant to non-absorption
probabilities and is fixed to ``Q_0j(1) = 1/(N+1)`` so that returns to any
state are proper regeneration times.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping

import jsonschema
import numpy as np

from . import numerics

STOCHASTIC_TOL = 1e-12
DEFAULT_GRID_POINTS = 101

MODEL_SCHEMA = {
    "type": "object",
    "required": ["num_states", "eps_max", "entries"],
    "properties": {
        "num_states": {"type": "integer", "minimum": 1},
        "eps_max": {"type": "number", "exclusiveMinimum": 0},
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "time", "poly"],
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "time": {"type": "integer"},
                    "poly": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": ["number", "string"]},
                    },
                },
            },
        },
    },
}


class ModelError(ValueError):
    """Raised for kernels that violate the schema or stochasticity."""


@dataclass(frozen=True)
class PerturbedKernel:
    """Finite-support kernel ``Q_ij(eps)(k)`` with polynomial eps-dependence.

    ``entries`` is a sorted tuple of ``((i, j, k), coeffs)`` pairs. Coefficients
    are kept exactly as supplied (int, float or :class:`fractions.Fraction`).
    Construction validates every invariant; instances are immutable.
    """

    num_states: int
    eps_max: float
    entries: tuple
    grid_points: int = field(default=DEFAULT_GRID_POINTS, compare=False)

    def __post_init__(self):
        n = self.num_states
        if not isinstance(n, int) or n < 1:
            raise ModelError("num_states must be an integer >= 1")
        if not (self.eps_max > 0 and math.isfinite(self.eps_max)):
            raise ModelError("eps_max must be a positive finite number")
        seen = set()
        for key, coeffs in self.entries:
            i, j, k = key
            if not 1 <= i <= n:
                raise ModelError(f"entry {key}: source state must be in 1..{n}")
            if not 0 <= j <= n:
                raise ModelError(f"entry {key}: target state must be in 0..{n}")
            if k < 1:
                raise ModelError(f"entry {key}: transition time must be >= 1")
            if key in seen:
                raise ModelError(f"duplicate entry {key}")
            if len(coeffs) == 0:
                raise ModelError(f"entry {key}: empty polynomial")
            for c in coeffs:
                if isinstance(c, float) and not math.isfinite(c):
                    raise ModelError(f"entry {key}: non-finite coefficient")
            seen.add(key)
        if not self.entries:
            raise ModelError("kernel has no entries")
        self._check_stochastic()

    @classmethod
    def from_entries(cls, num_states: int, eps_max: float, entries: Mapping | Iterable, **kw) -> "PerturbedKernel":
        """Build from a mapping ``(i, j, k) -> coeffs`` (or an iterable of pairs)."""
        items = entries.items() if isinstance(entries, Mapping) else entries
        norm = []
        for key, coeffs in items:
            i, j, k = (int(x) for x in key)
            if isinstance(coeffs, (int, float, Fraction, str)):
                coeffs = [coeffs]
            norm.append(((i, j, k), tuple(_parse_coeff(c) for c in coeffs)))
        norm.sort(key=lambda e: e[0])
        return cls(num_states, float(eps_max), tuple(norm), **kw)

    @property
    def N(self) -> int:
        return self.num_states

    @cached_property
    def max_time(self) -> int:
        return max(key[2] for key, _ in self.entries)

    @cached_property
    def degree(self) -> int:
        return max(len(c) for _, c in self.entries) - 1

    def coefficient_tensor(self, arith: str = "float") -> np.ndarray:
        """Array ``C[d, i, j, k]`` of eps^d coefficients, states 0..N, times 0..K.

        Row 0 carries the fixed absorbing-state convention.
        """
        if arith == "float":
            return self._tensor_float
        if arith == "exact":
            return self._tensor_exact
        with numerics.precision("mp"):
            return numerics.asarray(self._tensor_exact, "mp")

    @cached_property
    def _tensor_exact(self) -> np.ndarray:
        n, kmax, deg = self.num_states, self.max_time, self.degree
        t = np.empty((deg + 1, n + 1, n + 1, kmax + 1), dtype=object)
        t.fill(Fraction(0))
        t[0, 0, :, 1] = Fraction(1, n + 1)
        for (i, j, k), coeffs in self.entries:
            for d, c in enumerate(coeffs):
                t[d, i, j, k] = numerics.to_fraction(c)
        t.setflags(write=False)
        return t

    @cached_property
    def _tensor_float(self) -> np.ndarray:
        n, kmax, deg = self.num_states, self.max_time, self.degree
        t = np.zeros((deg + 1, n + 1, n + 1, kmax + 1))
        t[0, 0, :, 1] = 1.0 / (n + 1)
        for (i, j, k), coeffs in self.entries:
            for d, c in enumerate(coeffs):
                t[d, i, j, k] = float(c)
        t.setflags(write=False)
        return t

    def q_array(self, eps, arith: str = "float") -> np.ndarray:
        """``Q[i, j, k]`` evaluated at ``eps`` for states 0..N and times 0..K."""
        self._check_eps(eps)
        tensor = self.coefficient_tensor(arith)
        x = numerics.convert(eps, arith)
        if arith == "float":
            powers = x ** np.arange(tensor.shape[0])
            return np.tensordot(powers, tensor, axes=1)
        acc = tensor[-1].copy()
        for d in range(tensor.shape[0] - 2, -1, -1):
            acc = acc * x + tensor[d]
        return acc

    def _check_eps(self, eps) -> None:
        e = float(eps)
        if e < 0 or e > self.eps_max * (1 + 1e-12):
            raise ModelError(f"eps={e} outside validity interval [0, {self.eps_max}]")

    def _check_stochastic(self) -> None:
        t = self._tensor_float
        sums = t[:, 1:].sum(axis=(2, 3))
        target = np.zeros_like(sums)
        target[0] = 1.0
        bad = np.abs(sums - target) > STOCHASTIC_TOL * max(1.0, self.degree + 1)
        if bad.any():
            d, i = np.argwhere(bad)[0]
            raise ModelError(
                f"row {i + 1}: eps^{d} coefficients of the row sum are {float(sums[d, i])!r}, "
                f"expected {target[d, i]}"
            )
        grid = np.linspace(0.0, self.eps_max, max(2, self.grid_points))
        for e in grid:
            q = np.tensordot(e ** np.arange(t.shape[0]), t, axes=1)[1:]
            if (q < -STOCHASTIC_TOL).any():
                i, j, k = np.argwhere(q < -STOCHASTIC_TOL)[0]
                raise ModelError(f"negative probability Q_{i + 1}{j}({k}) = {float(q[i, j, k])!r} at eps={e}")
            if (q > 1 + STOCHASTIC_TOL).any():
                i, j, k = np.argwhere(q > 1 + STOCHASTIC_TOL)[0]
                raise ModelError(f"probability Q_{i + 1}{j}({k}) = {float(q[i, j, k])!r} exceeds 1 at eps={e}")
            rows = q.sum(axis=(1, 2))
            if (np.abs(rows - 1.0) > STOCHASTIC_TOL).any():
                i = int(np.argmax(np.abs(rows - 1.0)))
                raise ModelError(f"row {i + 1} sums to {float(rows[i])!r} at eps={e}")

    def absorbing_at_zero(self) -> bool:
        """True when some state jumps to 0 with positive probability at eps = 0."""
        return bool(any(self._tensor_exact[0, 1:, 0, :].ravel() != 0))


def _parse_coeff(c):
    if isinstance(c, bool):
        raise ModelError("boolean coefficient")
    if isinstance(c, (int, float, Fraction)):
        return c
    if isinstance(c, str):
        try:
            return Fraction(c.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ModelError(f"bad rational coefficient {c!r}") from exc
    raise ModelError(f"unsupported coefficient {c!r}")


def kernel_from_dict(doc: Mapping[str, Any]) -> PerturbedKernel:
    try:
        jsonschema.validate(doc, MODEL_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ModelError(f"schema violation: {exc.message}") from exc
    entries = [((e["from"], e["to"], e["time"]), e["poly"]) for e in doc["entries"]]
    return PerturbedKernel.from_entries(doc["num_states"], doc["eps_max"], entries)


def kernel_to_dict(kernel: PerturbedKernel) -> dict:
    def enc(c):
        return f"{c.numerator}/{c.denominator}" if isinstance(c, Fraction) else c

    return {
        "num_states": kernel.num_states,
        "eps_max": kernel.eps_max,
        "entries": [
            {"from": i, "to": j, "time": k, "poly": [enc(c) for c in coeffs]}
            for (i, j, k), coeffs in kernel.entries
        ],
    }


def load_kernel(document) -> PerturbedKernel:
    """Load a kernel from a path, a JSON string or an already-parsed mapping."""
    if isinstance(document, Mapping):
        return kernel_from_dict(document)
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        text = Path(document).read_text()
    elif hasattr(document, "read"):
        text = document.read()
    else:
        text = document
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from exc
    return kernel_from_dict(doc)


def dump_kernel(kernel: PerturbedKernel, path=None) -> str:
    text = json.dumps(kernel_to_dict(kernel), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def embedded_transition_matrix(kernel: PerturbedKernel, eps, arith: str = "float") -> np.ndarray:
    """Embedded chain ``p_ij(eps) = sum_k Q_ij(eps)(k)``; rows i=1..N, columns j=0..N."""
    with numerics.precision(arith):
        q = kernel.q_array(eps, arith)
        return q[1:].sum(axis=2)


@dataclass
class ValidationReport:
    condition_A: bool
    condition_B: bool
    reachability: list
    condition_C: bool
    condition_C_witness: dict | None
    condition_E: bool
    periods: dict
    rho_abscissa: dict
    messages: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.condition_A and self.condition_B and self.condition_C and self.condition_E

    def failed_conditions(self) -> list[str]:
        names = []
        for name in ("A", "B", "C", "E"):
            if not getattr(self, f"condition_{name}"):
                names.append(name)
        return names

    def to_dict(self) -> dict:
        return {
            "condition_A": self.condition_A,
            "condition_B": self.condition_B,
            "reachability": self.reachability,
            "condition_C": self.condition_C,
            "condition_C_witness": self.condition_C_witness,
            "condition_E": self.condition_E,
            "periods": {str(k): v for k, v in self.periods.items()},
            "rho_abscissa": {str(k): v for k, v in self.rho_abscissa.items()},
            "messages": list(self.messages),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ValidationReport":
        return cls(
            condition_A=d["condition_A"],
            condition_B=d["condition_B"],
            reachability=d["reachability"],
            condition_C=d["condition_C"],
            condition_C_witness=d["condition_C_witness"],
            condition_E=d["condition_E"],
            periods={int(k): v for k, v in d["periods"].items()},
            rho_abscissa={int(k): v for k, v in d["rho_abscissa"].items()},
            messages=list(d["messages"]),
        )


def reachability_matrix(kernel: PerturbedKernel, eps=0.0) -> np.ndarray:
    """Boolean ``R[i, j]``: j reachable from i in >= 1 embedded steps avoiding 0."""
    p = embedded_transition_matrix(kernel, eps)[:, 1:]
    reach = p > 0
    n = kernel.num_states
    for m in range(n):
        reach = reach | (reach[:, [m]] & reach[[m], :])
    return reach


def default_rho_scan(abscissa: float, points: int = 64) -> np.ndarray:
    hi = 0.95 * abscissa
    return np.geomspace(hi * 1e-6, hi, points)


def validate_model(kernel: PerturbedKernel, rho_scan=None) -> ValidationReport:
    """Check the standing conditions at eps = 0 and report, never raise.

    Continuity in eps holds for polynomial entries and the Cramér-type moment
    bound holds for every exponent because sojourn times have finite support,
    so only reachability, the supercritical scan and aperiodicity are tested.
    """
    from . import moments, renewal

    n = kernel.num_states
    messages = [
        "A: entries are polynomials in eps, hence continuous at eps=0",
        f"C(a): transition times are bounded by {kernel.max_time}, so every "
        "transition-time mgf is finite",
    ]

    reach = reachability_matrix(kernel, 0.0)
    cond_b = bool(reach.all())
    if not cond_b:
        for i, j in np.argwhere(~reach):
            messages.append(f"B fails: state {j + 1} is not reachable from state {i + 1} at eps=0")

    abscissa = {}
    witness = None
    for i in range(1, n + 1):
        try:
            abscissa[i] = moments.spectral_abscissa(kernel, 0.0, i)
        except Exception as exc:  # report entry, not a fault
            messages.append(f"abscissa for state {i} unavailable: {exc}")
    for i in range(1, n + 1):
        if i not in abscissa or abscissa[i] <= 0:
            continue
        grid = default_rho_scan(abscissa[i]) if rho_scan is None else np.asarray(rho_scan, dtype=float)
        grid = grid[(grid > 0) & (grid < abscissa[i])]
        for rho in grid:
            try:
                with warnings.catch_warnings():
                    # probes near the abscissa are expected to be ill-conditioned
                    warnings.simplefilter("ignore", RuntimeWarning)
                    val = moments.hitting_mgf(kernel, 0.0, float(rho), i)[i - 1]
            except moments.FinitenessError:
                break
            if val > 1:
                witness = {"beta": float(rho), "beta_i": float(rho), "state": i, "phi": float(val)}
                break
        if witness is not None:
            break
    cond_c = witness is not None
    if cond_c:
        messages.append(
            f"C(b): phi_{witness['state']}{witness['state']}(beta={witness['beta']:.6g}) = "
            f"{witness['phi']:.6g} > 1 at eps=0"
        )
    else:
        messages.append("C fails: no scanned rho gives a return-time mgf above 1 at eps=0")

    periods = {}
    for j in range(1, n + 1):
        support = renewal.return_time_support(kernel, 0.0, j)
        periods[j] = renewal.period_of(support) if support else 0
    cond_e = any(d == 1 for d in periods.values())
    if not cond_e:
        messages.append(f"E fails: every return-time law is periodic (periods {periods})")
    if cond_b and len(set(periods.values())) > 1:
        messages.append(f"warning: periods differ across states {periods}")

    return ValidationReport(
        condition_A=True,
        condition_B=cond_b,
        reachability=reach.astype(bool).tolist(),
        condition_C=cond_c,
        condition_C_witness=witness,
        condition_E=cond_e,
        periods=periods,
        rho_abscissa=abscissa,
        messages=messages,
    )
