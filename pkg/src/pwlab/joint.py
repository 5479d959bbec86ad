"""Mode-level two-time statistics for Alice's particle and Bob's particle.

Alice's particle is located in mode ``a`` after her first splitter and in
mode ``a2`` after the third one (the second "measurement" with phase
``xp``), Bob's particle in mode ``b``. The joint law is

    p(a, a2, b) = [1 + s(a,b) cos(x+y)] / 4 * [1 + s(a2,b) cos(xp+y)] / 2

with ``s(a,b) = (-1)**(a+b)``. Summing out ``a2`` or ``a`` gives the
no-signalling coincidence laws; summing out ``b`` gives a law for Alice's
two positions that depends on Bob's phase ``y``.

The second factor uses ``xp``; evaluating it at ``x`` would break the
marginal over ``a`` and the Bob-traced marginal, both of which are checked
in the test suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

A_VALUES = (1, 2)
B_VALUES = (3, 4)
# (a, a2, b) in lexicographic order
OUTCOMES = tuple((a, a2, b) for a in A_VALUES for a2 in A_VALUES for b in B_VALUES)

# samples per independent RNG sub-stream; see sample_outcomes
CHUNK = 4096


def _sign(u: int, v: int) -> int:
    return 1 if (u + v) % 2 == 0 else -1


@dataclass(frozen=True)
class TwoTimeJoint:
    """8-entry table p[a-1, a2-1, b-3] with the settings it was computed for."""

    p: np.ndarray
    x: float
    xp: float
    y: float

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(2, 2, 2)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def prob(self, a: int, a2: int, b: int) -> float:
        return float(self.p[a - 1, a2 - 1, b - 3])

    def items(self) -> Iterator[tuple[tuple[int, int, int], float]]:
        for a, a2, b in OUTCOMES:
            yield (a, a2, b), self.prob(a, a2, b)

    def flat(self) -> np.ndarray:
        return np.array([self.prob(*o) for o in OUTCOMES])


@dataclass(frozen=True)
class OutcomeTriple:
    a: int
    a2: int
    b: int
    index: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.a not in A_VALUES or self.a2 not in A_VALUES or self.b not in B_VALUES:
            raise ValueError(f"outcome out of range: {(self.a, self.a2, self.b)}")


def two_time_joint(x: float, xp: float, y: float) -> TwoTimeJoint:
    cx, cxp = math.cos(x + y), math.cos(xp + y)
    p = np.empty((2, 2, 2))
    for a, a2, b in OUTCOMES:
        first = (1 + _sign(a, b) * cx) / 4
        second = (1 + _sign(a2, b) * cxp) / 2
        p[a - 1, a2 - 1, b - 3] = first * second
    return TwoTimeJoint(p, x, xp, y)


def marginal_first(j: TwoTimeJoint) -> np.ndarray:
    """P(a, b), summed over the second time; 2x2 indexed [a-1, b-3]."""
    return j.p.sum(axis=1)


def marginal_second(j: TwoTimeJoint) -> np.ndarray:
    """P(a2, b), summed over the first time; 2x2 indexed [a2-1, b-3]."""
    return j.p.sum(axis=0)


def alice_two_time(j: TwoTimeJoint) -> np.ndarray:
    """P(a, a2) with Bob traced out; 2x2 indexed [a-1, a2-1]."""
    return j.p.sum(axis=2)


def signalling_gap(x: float, xp: float, y_grid: Sequence[float]) -> float:
    """Largest spread over ``y_grid`` of any entry of Alice's two-time table."""
    ys = list(y_grid)
    if not ys:
        raise ValueError("y_grid must be non-empty")
    tables = np.stack([alice_two_time(two_time_joint(x, xp, y)) for y in ys])
    return float(np.max(tables.max(axis=0) - tables.min(axis=0)))


def _draw(x: float, xp: float, y: float, u: np.ndarray) -> np.ndarray:
    """Map uniforms u[:, 0:2] to outcome codes via P(a,b) then P(a2|b).

    Returns an (n, 3) int array of (a, a2, b).
    """
    pab = marginal_first(two_time_joint(x, xp, y)).reshape(-1)  # (1,3),(1,4),(2,3),(2,4)
    cdf = np.cumsum(pab)
    cdf[-1] = 1.0
    k = np.searchsorted(cdf, u[:, 0], side="right")
    k = np.minimum(k, 3)
    a = 1 + k // 2
    b = 3 + k % 2
    cxp = math.cos(xp + y)
    # P(a2 = b - 2 | b): same-parity outcome, i.e. (1,3) or (2,4)
    p_same = (1 + cxp) / 2
    same = u[:, 1] < p_same
    a2 = np.where(same, b - 2, 5 - b)
    return np.stack([a, a2, b], axis=1)


def sample_outcome(x: float, xp: float, y: float, rng: np.random.Generator, index: int = 0) -> OutcomeTriple:
    a, a2, b = _draw(x, xp, y, rng.random((1, 2)))[0]
    return OutcomeTriple(int(a), int(a2), int(b), index=index)


def sample_outcomes(x: float, xp: float, y: float, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` outcome triples, returned as an (n, 3) int array.

    Stream splitting: sample ``i`` belongs to chunk ``i // CHUNK`` and chunk
    ``c`` draws from ``SeedSequence(seed).spawn(...)[c]``, so any prefix of
    chunks reproduces bit-for-bit regardless of how chunks are scheduled.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    n_chunks = -(-n // CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    parts = []
    for c, ss in enumerate(children):
        m = min(CHUNK, n - c * CHUNK)
        u = np.random.Generator(np.random.PCG64(ss)).random((m, 2))
        parts.append(_draw(x, xp, y, u))
    if not parts:
        return np.empty((0, 3), dtype=int)
    return np.concatenate(parts)


def empirical_joint(samples: np.ndarray) -> np.ndarray:
    """Frequency table [a-1, a2-1, b-3] of sampled triples."""
    counts = np.zeros((2, 2, 2))
    np.add.at(counts, (samples[:, 0] - 1, samples[:, 1] - 1, samples[:, 2] - 3), 1)
    return counts / max(len(samples), 1)


def l1_distance(samples: np.ndarray, j: TwoTimeJoint) -> float:
    return float(np.abs(empirical_joint(samples) - j.p).sum())


@dataclass(frozen=True)
class ChshEstimate:
    s: float
    stderr: float
    correlators: tuple[float, float, float, float]
    n_per_pair: int


def _pair_seeds(seed: int) -> list[int]:
    ss = np.random.SeedSequence(seed).spawn(4)
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss]


def chsh_from_samples(x: float, xp: float, y: float, yp: float, n: int, seed: int) -> ChshEstimate:
    """CHSH value from first-time outcomes sampled at each setting pair.

    For the pair using Alice's setting x the other Alice setting serves as
    her second measurement (and vice versa); only (a, b) enters the estimate.
    """
    if n < 1:
        raise ValueError("need at least one sample per setting pair")
    pairs = [(x, xp, y), (x, xp, yp), (xp, x, y), (xp, x, yp)]
    signs = (1, 1, 1, -1)
    es, var = [], 0.0
    for (ax, ax2, by), sd in zip(pairs, _pair_seeds(seed)):
        smp = sample_outcomes(ax, ax2, by, n, sd)
        prod = np.where(smp[:, 0] == 1, 1, -1) * np.where(smp[:, 2] == 3, 1, -1)
        e = float(prod.mean())
        es.append(e)
        # single sample: no variance estimate, use the +-1 outcome bound
        var += (float(prod.var(ddof=1)) if n > 1 else 1.0) / n
    s = sum(sg * e for sg, e in zip(signs, es))
    return ChshEstimate(s, math.sqrt(var), tuple(es), n)
