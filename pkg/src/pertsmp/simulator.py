"""Monte Carlo sampling of the perturbed semi-Markov process.

Trajectories are split into fixed-size chunks and chunk ``c`` draws from its
own generator spawned from ``SeedSequence(seed)``. The partition depends only
on ``(trials, chunk_size)``, so running chunks serially or on a thread pool
gives bit-identical estimates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .model import PerturbedKernel

CHUNK_SIZE = 2**16
MAX_JUMPS = 10**6


@dataclass(frozen=True)
class SimConfig:
    eps: float
    i: int
    n: int
    trials: int
    seed: int = 0
    chunk_size: int = CHUNK_SIZE
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.n < 0:
            raise ValueError("horizon n must be >= 0")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def chunks(self) -> list[tuple[int, np.random.SeedSequence]]:
        count = -(-self.trials // self.chunk_size)
        seqs = np.random.SeedSequence(self.seed).spawn(count)
        sizes = [self.chunk_size] * (count - 1) + [self.trials - self.chunk_size * (count - 1)]
        return list(zip(sizes, seqs))


@dataclass
class SimEstimate:
    """Occupation estimates at time ``n``.

    ``counts[j]`` for j = 0..N is the number of trajectories in state j at time
    n (state 0 meaning absorbed by n), so the counts sum to ``trials``.
    """

    config: SimConfig
    counts: np.ndarray
    P: np.ndarray = field(init=False)
    se: np.ndarray = field(init=False)
    absorbed: float = field(init=False)

    def __post_init__(self):
        t = self.config.trials
        p = self.counts / t
        self.P = p[1:]
        self.se = np.sqrt(p[1:] * (1 - p[1:]) / t)
        self.absorbed = float(p[0])

    def z_scores(self, exact) -> np.ndarray:
        """``(P_hat - exact) / se``.

        Where the plug-in SE is zero (no or all trajectories in a state) the
        binomial SE at the exact value is used instead; if that vanishes too
        the score is 0 for a match and inf otherwise.
        """
        exact = np.asarray(exact, dtype=float)
        diff = self.P - exact
        null_se = np.sqrt(np.clip(exact * (1 - exact), 0.0, None) / self.config.trials)
        se = np.where(self.se > 0, self.se, null_se)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(np.abs(diff) < 1e-12, 0.0, np.inf))

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "counts": [int(c) for c in self.counts],
            "P": [float(x) for x in self.P],
            "se": [float(x) for x in self.se],
            "absorbed": self.absorbed,
        }


@dataclass
class MomentEstimate:
    """Sample means of ``mu_j^r 1{nu_0 > nu_j}`` for r = 0..r_max."""

    config: SimConfig
    target: int
    mean: np.ndarray
    se: np.ndarray


def _sampler(kernel: "PerturbedKernel", eps):
    """Joint (next state, sojourn) sampler for all states by inverse CDF.

    Row s of the flattened law over (j, k) is shifted by s, so one
    ``searchsorted`` on the concatenated table serves every current state.
    """
    q = kernel.q_array(eps)[:, :, 1:]
    n_states, _, kmax = q.shape
    flat = np.clip(q.reshape(n_states, -1), 0.0, None)
    cdf = np.cumsum(flat, axis=1)
    cdf /= cdf[:, -1:]
    width = flat.shape[1]
    table = (cdf + np.arange(n_states)[:, None]).ravel()
    # rounding of s + u up to s + 1 must land on the last atom with mass
    last = width - 1 - np.argmax(flat[:, ::-1] > 0, axis=1)

    def draw(states: np.ndarray, u: np.ndarray):
        idx = np.searchsorted(table, states + u, side="right")
        idx = np.minimum(idx - states * width, last[states])
        return idx // kmax, idx % kmax + 1

    return draw


def _run_chunk(draw, cfg: SimConfig, n_states: int, size: int, seq) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seq))
    state = np.full(size, cfg.i, dtype=np.int64)
    epoch = np.zeros(size, dtype=np.int64)
    live = np.arange(size)
    final = np.empty(size, dtype=np.int64)
    while live.size:
        nxt, k = draw(state[live], rng.random(live.size))
        beyond = epoch[live] + k > cfg.n
        final[live[beyond]] = state[live[beyond]]
        moved = live[~beyond]
        state[moved] = nxt[~beyond]
        epoch[moved] += k[~beyond]
        dead = state[moved] == 0
        final[moved[dead]] = 0
        live = moved[~dead]
    return np.bincount(final, minlength=n_states)


def _map_chunks(fn, cfg: SimConfig):
    work = cfg.chunks()
    if cfg.workers > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(lambda w: fn(*w), work))
    return [fn(*w) for w in work]


def simulate(kernel: "PerturbedKernel", cfg: SimConfig) -> SimEstimate:
    """Estimate ``P_ij(n)`` for all j from ``cfg.trials`` independent trajectories."""
    if not 1 <= cfg.i <= kernel.num_states:
        raise ValueError(f"initial state must be in 1..{kernel.num_states}")
    draw = _sampler(kernel, cfg.eps)
    n_states = kernel.num_states + 1
    parts = _map_chunks(lambda size, seq: _run_chunk(draw, cfg, n_states, size, seq), cfg)
    return SimEstimate(cfg, np.sum(parts, axis=0))


def _hitting_chunk(draw, cfg: SimConfig, j: int, r_max: int, size: int, seq):
    rng = np.random.Generator(np.random.PCG64(seq))
    state = np.full(size, cfg.i, dtype=np.int64)
    epoch = np.zeros(size, dtype=np.int64)
    hit = np.zeros(size, dtype=bool)
    live = np.arange(size)
    for _ in range(MAX_JUMPS):
        if not live.size:
            break
        nxt, k = draw(state[live], rng.random(live.size))
        state[live] = nxt
        epoch[live] += k
        hit[live] = nxt == j
        live = live[(nxt != j) & (nxt != 0)]
    else:
        raise RuntimeError(f"{live.size} trajectories neither hit {j} nor 0 within {MAX_JUMPS} jumps")
    mu = epoch.astype(float)
    powers = np.stack([np.where(hit, mu**r, 0.0) for r in range(r_max + 1)])
    return powers.sum(axis=1), (powers**2).sum(axis=1)


def sample_hitting_moments(kernel: "PerturbedKernel", cfg: SimConfig, j: int, r_max: int = 3) -> MomentEstimate:
    """Plug-in estimates of ``E_i mu_j^r; nu_0 > nu_j`` with standard errors.

    The hitting time counts jumps at times >= 1, so for ``j == i`` it is the
    return time. ``cfg.n`` is not used.
    """
    if not 1 <= j <= kernel.num_states:
        raise ValueError(f"target must be in 1..{kernel.num_states}")
    draw = _sampler(kernel, cfg.eps)
    parts = _map_chunks(lambda size, seq: _hitting_chunk(draw, cfg, j, r_max, size, seq), cfg)
    s1 = np.sum([p[0] for p in parts], axis=0)
    s2 = np.sum([p[1] for p in parts], axis=0)
    t = cfg.trials
    mean = s1 / t
    var = np.maximum(s2 / t - mean**2, 0.0)
    se = np.sqrt(var / t) if t > 1 else np.full_like(mean, math.inf)
    return MomentEstimate(cfg, j, mean, se)
