"""Distances between partitions and between linear orders."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from relkit.core import ConstraintClass, Relation, labels_from_equivalence

__all__ = [
    "PartitionView",
    "PermutationView",
    "rand_error",
    "variation_of_information",
    "pair_disagreement",
    "kendall_distance",
    "cayley_distance",
    "hamming_distance",
    "summarize",
    "random_order_baseline",
    "monte_carlo_baseline",
    "MetricRow",
]


@dataclass(frozen=True, eq=False)
class PartitionView:
    """A partition stored as block labels; ``blocks`` lists the member sets."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        _, canon = np.unique(lab, return_inverse=True)
        object.__setattr__(self, "labels", canon.astype(np.int64))

    @classmethod
    def from_relation(cls, r: Relation) -> "PartitionView":
        if r.constraint_class is not ConstraintClass.EQUIVALENCE:
            raise ValueError("partition view needs an equivalence relation")
        return cls(labels_from_equivalence(r))

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]]) -> "PartitionView":
        blocks = [sorted(b) for b in blocks]
        members = sorted(x for b in blocks for x in b)
        if members != list(range(len(members))) or any(not b for b in blocks):
            raise ValueError("blocks must be non-empty, disjoint and cover 0..n-1")
        labels = np.empty(len(members), dtype=np.int64)
        for k, b in enumerate(blocks):
            labels[b] = k
        return cls(labels)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def blocks(self) -> list[set[int]]:
        return [set(np.flatnonzero(self.labels == k).tolist()) for k in range(int(self.labels.max()) + 1)]


@dataclass(frozen=True, eq=False)
class PermutationView:
    """``rank[a]`` is the position of element ``a`` (0 = first)."""

    rank: np.ndarray

    def __post_init__(self):
        rank = np.asarray(self.rank, dtype=np.int64)
        if sorted(rank.tolist()) != list(range(rank.size)):
            raise ValueError("rank must be a bijection onto 0..n-1")
        object.__setattr__(self, "rank", rank)

    @classmethod
    def from_relation(cls, r: Relation) -> "PermutationView":
        if r.constraint_class is not ConstraintClass.LINEAR_ORDER:
            raise ValueError("permutation view needs a linear order")
        # number of elements <= a, minus a itself
        return cls(r.bits.sum(axis=0).astype(np.int64) - 1)

    @classmethod
    def from_sequence(cls, sequence: Sequence[int]) -> "PermutationView":
        seq = np.asarray(sequence, dtype=np.int64)
        rank = np.empty_like(seq)
        rank[seq] = np.arange(seq.size)
        return cls(rank)

    @property
    def n(self) -> int:
        return int(self.rank.size)

    @property
    def sequence(self) -> np.ndarray:
        seq = np.empty_like(self.rank)
        seq[self.rank] = np.arange(self.rank.size)
        return seq


def _same_universe(p, q) -> None:
    if p.n != q.n:
        raise ValueError(f"universes differ: {p.n} != {q.n} elements")


def rand_error(p: PartitionView, q: PartitionView) -> float:
    """Fraction of unordered pairs on which ``p`` and ``q`` disagree about co-membership."""
    _same_universe(p, q)
    n = p.n
    if n < 2:
        return 0.0
    # pair counts from the contingency table avoid the O(n^2) pair loop
    _, table = np.unique(np.stack([p.labels, q.labels]), axis=1, return_counts=True)
    both = float(np.sum(table * (table - 1) / 2))
    in_p = float(np.sum([c * (c - 1) / 2 for c in np.bincount(p.labels)]))
    in_q = float(np.sum([c * (c - 1) / 2 for c in np.bincount(q.labels)]))
    return (in_p + in_q - 2 * both) / (n * (n - 1) / 2)


def _entropy(counts: np.ndarray, n: int) -> float:
    pr = counts[counts > 0] / n
    return float(-np.sum(pr * np.log2(pr)))


def variation_of_information(p: PartitionView, q: PartitionView) -> float:
    """``H(p) + H(q) - 2 I(p, q)`` in bits."""
    _same_universe(p, q)
    n = p.n
    _, joint = np.unique(np.stack([p.labels, q.labels]), axis=1, return_counts=True)
    h_joint = _entropy(joint, n)
    h_p = _entropy(np.bincount(p.labels), n)
    h_q = _entropy(np.bincount(q.labels), n)
    # VI = 2 H(p, q) - H(p) - H(q)
    return max(0.0, 2 * h_joint - h_p - h_q)


def kendall_distance(p: PermutationView, q: PermutationView) -> int:
    """Number of unordered pairs ordered oppositely by ``p`` and ``q``."""
    _same_universe(p, q)
    dp = np.sign(p.rank[:, None] - p.rank[None, :])
    dq = np.sign(q.rank[:, None] - q.rank[None, :])
    return int(np.sum(np.triu(dp * dq < 0, k=1)))


def pair_disagreement(p: PermutationView, q: PermutationView) -> float:
    """Kendall distance normalized by the number of pairs."""
    n = p.n
    if n < 2:
        _same_universe(p, q)
        return 0.0
    return kendall_distance(p, q) / (n * (n - 1) / 2)


def cayley_distance(p: PermutationView, q: PermutationView, normalized: bool = False):
    """Fewest transpositions turning one order into the other, ``n - #cycles``."""
    _same_universe(p, q)
    n = p.n
    # sigma maps a position in p to the position of the same element in q
    sigma = np.empty(n, dtype=np.int64)
    sigma[p.rank] = q.rank
    seen = np.zeros(n, dtype=bool)
    cycles = 0
    for start in range(n):
        if not seen[start]:
            cycles += 1
            i = start
            while not seen[i]:
                seen[i] = True
                i = sigma[i]
    d = n - cycles
    if normalized:
        return d / (n - 1) if n > 1 else 0.0
    return d


def hamming_distance(p: PermutationView, q: PermutationView, normalized: bool = False):
    """Number of elements whose positions differ."""
    _same_universe(p, q)
    d = int(np.sum(p.rank != q.rank))
    if normalized:
        return d / p.n
    return d


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("summarize needs at least one value")
    if len(values) == 1:
        return values[0], 0.0
    return statistics.fmean(values), statistics.stdev(values)


def random_order_baseline(metric: str, n: int) -> float:
    """Expected normalized distance between a fixed order and a uniformly random one.

    Closed forms: pairwise disagreement 1/2; Cayley ``(n - H_n) / (n - 1)``
    since a random permutation has ``H_n`` cycles on average; Hamming
    ``(n - 1) / n`` since it has one fixed point on average.
    """
    if n < 2:
        return 0.0
    if metric == "pair_disagreement":
        return 0.5
    if metric == "cayley":
        harmonic = sum(1.0 / k for k in range(1, n + 1))
        return (n - harmonic) / (n - 1)
    if metric == "hamming":
        return (n - 1) / n
    raise ValueError(f"unknown metric {metric!r}")


def monte_carlo_baseline(metric: str, n: int, shuffles: int = 10_000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    ident = PermutationView(np.arange(n))
    fn = {
        "pair_disagreement": pair_disagreement,
        "cayley": lambda p, q: cayley_distance(p, q, normalized=True),
        "hamming": lambda p, q: hamming_distance(p, q, normalized=True),
    }[metric]
    return float(np.mean([fn(ident, PermutationView(rng.permutation(n))) for _ in range(shuffles)]))


@dataclass(frozen=True)
class MetricRow:
    instance: str
    n: int
    metric: str
    raw: float
    normalized: float

    HEADER = ("instance", "n", "metric", "raw", "normalized")

    def as_tuple(self) -> tuple:
        return (self.instance, self.n, self.metric, _fmt(self.raw), _fmt(self.normalized))


def _fmt(v: float) -> str:
    return format(float(v), ".12g")
