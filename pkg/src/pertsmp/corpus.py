"""Bundled example kernels and a generator of random valid kernels."""

from __future__ import annotations

import json
from fractions import Fraction
from importlib import resources

import numpy as np

from .model import PerturbedKernel, kernel_from_dict, validate_model

PSEUDO_STATIONARY = ("geometric", "pseudo3", "cycle4")
QUASI_STATIONARY = ("quasi", "quasi3")
RANDOM_SEED = 20240611
RANDOM_COUNT = 20


def names() -> list[str]:
    files = resources.files(__package__).joinpath("models").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def path(name: str):
    return resources.files(__package__).joinpath("models", f"{name}.json")


def document(name: str) -> dict:
    return json.loads(path(name).read_text())


def load(name: str) -> PerturbedKernel:
    return kernel_from_dict(document(name))


def load_all() -> dict:
    return {name: load(name) for name in names()}


def _rational(x: float, denom: int = 1000) -> Fraction:
    return Fraction(round(x * denom), denom)


def random_kernel(rng: np.random.Generator, eps_max: float = 0.1, quasi: bool | None = None) -> PerturbedKernel:
    """Random kernel satisfying the standing conditions.

    Every state jumps to every transient state at time 1 with positive
    probability at eps = 0, so the limiting chain is irreducible and aperiodic.
    Extra atoms at times 2..K spread the sojourns. Absorption is taken out of
    the largest atom of each row as ``a eps + b eps^2`` (plus a constant when
    ``quasi``). All coefficients are rationals with denominator 1000.
    """
    n = int(rng.integers(2, 5))
    kmax = int(rng.integers(1, 4))
    if quasi is None:
        quasi = bool(rng.integers(0, 2))
    entries = {}
    for i in range(1, n + 1):
        weights = {(j, 1): 1.0 + rng.random() for j in range(1, n + 1)}
        for _ in range(int(rng.integers(0, 2 * n))):
            j, k = int(rng.integers(1, n + 1)), int(rng.integers(1, kmax + 1))
            weights[(j, k)] = weights.get((j, k), 0.0) + rng.random()
        total = sum(weights.values())
        base = {key: _rational(w / total) for key, w in weights.items()}
        big = max(base, key=base.get)
        base[big] += 1 - sum(base.values())
        absorb0 = _rational(0.05 + 0.25 * rng.random()) if quasi else Fraction(0)
        a = _rational(0.2 + rng.random())
        b = _rational(rng.random())
        k0 = int(rng.integers(1, kmax + 1))
        for (j, k), p in base.items():
            coeffs = [p]
            if (j, k) == big:
                coeffs = [p - absorb0, -a, -b]
            entries[(i, j, k)] = coeffs
        entries[(i, 0, k0)] = [absorb0, a, b]
    return PerturbedKernel.from_entries(n, eps_max, entries)


def random_corpus(seed: int = RANDOM_SEED, count: int = RANDOM_COUNT) -> list[PerturbedKernel]:
    """``count`` random kernels that pass :func:`validate_model`, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        try:
            kernel = random_kernel(rng, quasi=len(out) % 2 == 1)
        except ValueError:
            continue
        if validate_model(kernel).passed:
            out.append(kernel)
    return out
