"""Domain types shared by every relkit module.

Element ids are dense 0-based integers.  A relation between ``A`` and ``B`` is
stored as its characteristic 0/1 matrix of shape ``(|A|, |B|)``; for relations
on a single set ``A == B`` and ``bits[a, a2] == 1`` means the pair ``a a2`` is
related (for linear orders: ``a`` is less than or equal to ``a2``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from relkit.errors import ShapeError

__all__ = [
    "ConstraintClass",
    "FeatureStore",
    "Relation",
    "Evidence",
    "CostMatrix",
    "Violation",
    "Validation",
    "validate_relation",
    "relation_objective",
    "equivalence_from_labels",
    "labels_from_equivalence",
    "order_from_sequence",
    "sequence_from_order",
    "map_from_assignment",
    "assignment_from_map",
]


class ConstraintClass(str, enum.Enum):
    UNCONSTRAINED = "unconstrained"
    MAP = "map"
    EQUIVALENCE = "equivalence"
    LINEAR_ORDER = "linear_order"

    @classmethod
    def parse(cls, value: "str | ConstraintClass") -> "ConstraintClass":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"order": "linear_order", "partition": "equivalence", "cluster": "equivalence"}
        return cls(aliases.get(key, key))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _check_shape(shape) -> tuple[int, int]:
    if len(shape) != 2:
        raise ShapeError(f"shape must have two entries, got {shape!r}")
    n_a, n_b = int(shape[0]), int(shape[1])
    if n_a < 1 or n_b < 1:
        raise ShapeError(f"index sets must be non-empty, got shape {(n_a, n_b)}")
    return n_a, n_b


@dataclass(frozen=True, eq=False)
class FeatureStore:
    """Feature vectors of pairs ``ab``, one matrix row per pair.

    ``pairs[i]`` is the pair ``(a, b)`` described by row ``i`` of ``matrix``.
    Binary stores are kept as canonical CSR (sorted, duplicate-free column
    indices per row), which is the sparse index-list representation.  Sketched
    features are integer-valued and may be held as a dense array instead.
    """

    shape: tuple[int, int]
    pairs: np.ndarray
    matrix: "sp.csr_matrix | np.ndarray"
    num_features: int

    def __post_init__(self):
        shape = _check_shape(self.shape)
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size and (
            pairs.min() < 0 or pairs[:, 0].max() >= shape[0] or pairs[:, 1].max() >= shape[1]
        ):
            raise ShapeError(f"pair index out of range for shape {shape}")
        matrix = self.matrix
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix)
            if not matrix.has_sorted_indices:
                matrix.sort_indices()
            before = matrix.nnz
            matrix.sum_duplicates()
            if matrix.nnz != before:
                raise ValueError("feature index lists must not contain duplicates")
        else:
            matrix = np.asarray(matrix)
            if matrix.ndim != 2:
                raise ShapeError("dense feature matrix must be 2-D")
        if matrix.shape[0] != pairs.shape[0]:
            raise ShapeError(f"{matrix.shape[0]} feature rows for {pairs.shape[0]} pairs")
        if matrix.shape[1] != int(self.num_features):
            raise ShapeError(f"matrix has {matrix.shape[1]} columns, num_features={self.num_features}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "pairs", _frozen(pairs))
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "num_features", int(self.num_features))

    @classmethod
    def from_index_lists(
        cls,
        shape: tuple[int, int],
        vectors: Mapping[tuple[int, int], Sequence[int]],
        num_features: int,
    ) -> "FeatureStore":
        pairs = sorted(vectors)
        indptr = [0]
        indices: list[int] = []
        for pair in pairs:
            idx = list(vectors[pair])
            if any(j >= num_features or j < 0 for j in idx):
                raise ValueError(f"feature index out of range for pair {pair}")
            if any(b <= a for a, b in zip(idx, idx[1:])):
                raise ValueError(f"feature indices of pair {pair} must be strictly increasing")
            indices.extend(idx)
            indptr.append(len(indices))
        data = np.ones(len(indices), dtype=np.float64)
        matrix = sp.csr_matrix((data, indices, indptr), shape=(len(pairs), num_features))
        return cls(shape, np.array(pairs, dtype=np.int64).reshape(-1, 2), matrix, num_features)

    @classmethod
    def grid(cls, shape: tuple[int, int], matrix) -> "FeatureStore":
        """Store with one row per pair of ``A x B`` in row-major order."""
        n_a, n_b = _check_shape(shape)
        aa, bb = np.meshgrid(np.arange(n_a), np.arange(n_b), indexing="ij")
        pairs = np.stack([aa.ravel(), bb.ravel()], axis=1)
        return cls((n_a, n_b), pairs, matrix, matrix.shape[1])

    @property
    def num_pairs(self) -> int:
        return int(self.pairs.shape[0])

    def covers_grid(self) -> bool:
        n_a, n_b = self.shape
        if self.num_pairs != n_a * n_b:
            return False
        flat = self.pairs[:, 0] * n_b + self.pairs[:, 1]
        return np.unique(flat).size == n_a * n_b

    def grid_order(self) -> np.ndarray:
        """Row-major flat index ``a * |B| + b`` of every stored row."""
        return self.pairs[:, 0] * self.shape[1] + self.pairs[:, 1]

    def active(self, a: int, b: int) -> list[int]:
        """Sorted active feature indices of pair ``ab`` (binary stores)."""
        rows = np.flatnonzero((self.pairs[:, 0] == a) & (self.pairs[:, 1] == b))
        if rows.size == 0:
            raise KeyError((a, b))
        row = self.matrix[rows[0]]
        if sp.issparse(row):
            return row.indices[row.data != 0].tolist()
        return np.flatnonzero(np.ravel(row)).tolist()

    def is_binary(self) -> bool:
        data = self.matrix.data if sp.issparse(self.matrix) else self.matrix
        return bool(np.all((data == 0) | (data == 1)))


@dataclass(frozen=True, eq=False)
class Relation:
    """Characteristic matrix of a relation plus the class it must belong to."""

    shape: tuple[int, int]
    bits: np.ndarray
    constraint_class: ConstraintClass = ConstraintClass.UNCONSTRAINED

    def __post_init__(self):
        shape = _check_shape(self.shape)
        bits = np.asarray(self.bits)
        if bits.size != shape[0] * shape[1]:
            raise ShapeError(f"{bits.size} bits do not fit shape {shape}")
        if bits.size and not np.all((bits == 0) | (bits == 1)):
            raise ValueError("relation bits must be 0 or 1")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "bits", _frozen(bits.reshape(shape).astype(np.uint8)))
        object.__setattr__(self, "constraint_class", ConstraintClass.parse(self.constraint_class))

    def __eq__(self, other):
        if not isinstance(other, Relation):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.constraint_class == other.constraint_class
            and np.array_equal(self.bits, other.bits)
        )

    def __hash__(self):
        return hash((self.shape, self.constraint_class, self.bits.tobytes()))


@dataclass(frozen=True)
class Evidence:
    """Pairs whose membership in the relation is fixed a priori."""

    pinned: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (a, b), v in dict(self.pinned).items():
            if v not in (0, 1):
                raise ValueError(f"pinned value for {(a, b)} must be 0 or 1, got {v!r}")
            clean[(int(a), int(b))] = int(v)
        object.__setattr__(self, "pinned", MappingProxyType(clean))

    def __len__(self):
        return len(self.pinned)

    def __iter__(self):
        return iter(self.pinned.items())

    def check_bounds(self, shape: tuple[int, int]) -> None:
        for a, b in self.pinned:
            if not (0 <= a < shape[0] and 0 <= b < shape[1]):
                raise ShapeError(f"evidence pair {(a, b)} outside shape {shape}")

    def agrees_with(self, relation: Relation) -> bool:
        return all(relation.bits[a, b] == v for (a, b), v in self.pinned.items())

    @classmethod
    def from_relation(cls, relation: Relation, pairs: Iterable[tuple[int, int]]) -> "Evidence":
        return cls({(a, b): int(relation.bits[a, b]) for a, b in pairs})


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Coefficients ``c_ab`` of the 0/1 linear inference objective ``sum c_ab y_ab``."""

    costs: np.ndarray

    def __post_init__(self):
        costs = np.array(self.costs, dtype=np.float64)
        if costs.ndim != 2:
            raise ShapeError("cost matrix must be 2-D")
        _check_shape(costs.shape)
        if not np.all(np.isfinite(costs)):
            raise ValueError("cost matrix entries must be finite")
        object.__setattr__(self, "costs", _frozen(costs))

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape

    def __add__(self, other: "CostMatrix") -> "CostMatrix":
        return CostMatrix(self.costs + other.costs)


@dataclass(frozen=True)
class Violation:
    constraint: str
    indices: tuple[int, ...]

    def __str__(self):
        return f"{self.constraint} violated at {self.indices}"


@dataclass(frozen=True)
class Validation:
    ok: bool
    violation: Violation | None = None

    def __bool__(self):
        return self.ok


def _first(mask: np.ndarray):
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]) if len(idx) else None


def _check_map(y: np.ndarray) -> Violation | None:
    rows = y.sum(axis=1)
    for a in range(y.shape[0]):
        if rows[a] == 0:
            return Violation("existence", (a,))
        if rows[a] > 1:
            b1, b2 = np.flatnonzero(y[a])[:2]
            return Violation("uniqueness", (a, int(b1), int(b2)))
    return None


def _check_transitive(y: np.ndarray) -> Violation | None:
    # Path a -> b -> c with y_ac = 0; reflexivity already holds, so a, b, c are distinct.
    yi = y.astype(np.int64)
    two_step = (yi @ yi) > 0
    hit = _first(two_step & (yi == 0))
    if hit is None:
        return None
    a, c = hit
    b = int(np.flatnonzero(yi[a] & yi[:, c])[0])
    return Violation("transitivity", (a, b, c))


def validate_relation(r: Relation) -> Validation:
    """Check the integer-arithmetic constraints of ``r.constraint_class``.

    On failure the first violated constraint instance is reported: rows in
    order for maps; for relations on one set the checks run reflexivity,
    symmetry or antisymmetry, totality, transitivity, each scanning pairs in
    lexicographic order.
    """
    y = r.bits
    cls = r.constraint_class
    if cls is ConstraintClass.UNCONSTRAINED:
        return Validation(True)
    if cls is ConstraintClass.MAP:
        v = _check_map(y)
        return Validation(v is None, v)
    if y.shape[0] != y.shape[1]:
        raise ShapeError(f"{cls.value} relations need |A| = |B|, got shape {y.shape}")
    n = y.shape[0]
    diag = np.flatnonzero(np.diag(y) != 1)
    if diag.size:
        return Validation(False, Violation("reflexivity", (int(diag[0]),)))
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    if cls is ConstraintClass.EQUIVALENCE:
        hit = _first(upper & (y != y.T))
        if hit:
            return Validation(False, Violation("symmetry", hit))
    else:
        hit = _first(upper & (y.astype(int) + y.T > 1))
        if hit:
            return Validation(False, Violation("antisymmetry", hit))
        hit = _first(upper & (y.astype(int) + y.T < 1))
        if hit:
            return Validation(False, Violation("totality", hit))
    v = _check_transitive(y)
    return Validation(v is None, v)


def relation_objective(r: Relation, c: CostMatrix) -> float:
    """Return ``sum_ab c_ab * y_ab``."""
    if r.shape != c.shape:
        raise ShapeError(f"relation shape {r.shape} != cost shape {c.shape}")
    return float(np.sum(c.costs[r.bits.astype(bool)]))


# -- conversions between relations and their usual combinatorial views --------


def equivalence_from_labels(labels: Sequence[int]) -> Relation:
    lab = np.asarray(labels)
    return Relation((lab.size, lab.size), lab[:, None] == lab[None, :], ConstraintClass.EQUIVALENCE)


def labels_from_equivalence(r: Relation) -> np.ndarray:
    """Block labels in first-occurrence order (a restricted growth string)."""
    n = r.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for a in range(n):
        if labels[a] < 0:
            labels[r.bits[a].astype(bool)] = nxt
            nxt += 1
    return labels


def order_from_sequence(sequence: Sequence[int]) -> Relation:
    """Linear order listing ``sequence[0]`` first; ``y[a, a2] = 1`` iff ``a`` is not after ``a2``."""
    seq = np.asarray(sequence, dtype=np.int64)
    n = seq.size
    if sorted(seq.tolist()) != list(range(n)):
        raise ValueError("sequence must be a permutation of 0..n-1")
    pos = np.empty(n, dtype=np.int64)
    pos[seq] = np.arange(n)
    return Relation((n, n), pos[:, None] <= pos[None, :], ConstraintClass.LINEAR_ORDER)


def sequence_from_order(r: Relation) -> np.ndarray:
    rank = r.bits.sum(axis=0).astype(np.int64) - 1
    seq = np.empty_like(rank)
    seq[rank] = np.arange(rank.size)
    return seq


def map_from_assignment(assignment: Sequence[int], n_labels: int) -> Relation:
    lab = np.asarray(assignment, dtype=np.int64)
    bits = np.zeros((lab.size, n_labels), dtype=np.uint8)
    bits[np.arange(lab.size), lab] = 1
    return Relation((lab.size, n_labels), bits, ConstraintClass.MAP)


def assignment_from_map(r: Relation) -> np.ndarray:
    return np.argmax(r.bits, axis=1)
