"""Feature maps over binary vectors.

* exact multilinear polynomial lifting: one output per monomial (subset of
  input coordinates), optionally truncated to monomials of bounded degree;
* a randomized tensor sketch whose inner products estimate the polynomial
  kernel ``(1 + <x, x'>)^d``;
* transposition-invariant features of element pairs (AND and XOR bits).
"""

from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from relkit.core import FeatureStore
from relkit.errors import SizeGuardError

__all__ = [
    "LiftMode",
    "LiftSpec",
    "lift_exact",
    "ExactLifter",
    "TensorSketch",
    "lift_sketch",
    "circular_convolve",
    "lift_features",
    "pair_features",
    "pair_feature_matrix",
    "MAX_EXACT_INPUTS",
    "MAX_EXACT_OUTPUTS",
]

MAX_EXACT_INPUTS = 20
MAX_EXACT_OUTPUTS = 1 << 22
DIRECT_CONVOLUTION_MAX_WIDTH = 1024


class LiftMode(str, enum.Enum):
    EXACT = "exact"
    SKETCH = "sketch"


@dataclass(frozen=True)
class LiftSpec:
    """How raw binary features are lifted before learning.

    ``mode="exact"`` with ``degree=None`` is the full lifting onto all
    ``2^|J|`` monomials.  With an integer ``degree`` only monomials of at most
    that many factors are kept, so ``degree=1`` means a constant feature plus
    the raw features.  ``mode="sketch"`` needs ``degree``, ``width`` and
    ``seed``.
    """

    mode: LiftMode = LiftMode.EXACT
    degree: int | None = 1
    width: int | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", LiftMode(self.mode))
        if self.degree is not None and int(self.degree) < 1:
            raise ValueError("degree must be >= 1")
        if self.mode is LiftMode.SKETCH:
            if self.degree is None or self.width is None or int(self.width) < 1:
                raise ValueError("sketch lifting needs degree >= 1 and width >= 1")
            if self.seed is None:
                raise ValueError("sketch lifting needs a seed")

    def output_dim(self, num_inputs: int) -> int:
        if self.mode is LiftMode.SKETCH:
            return int(self.width)
        return ExactLifter(num_inputs, self.degree).num_outputs

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "degree": self.degree, "width": self.width, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict | None) -> "LiftSpec":
        if not data:
            return cls()
        return cls(
            mode=data.get("mode", "exact"),
            degree=data.get("degree", 1),
            width=data.get("width"),
            seed=data.get("seed"),
        )


def lift_exact(v) -> np.ndarray:
    """Full multilinear lifting of a binary vector.

    Output entry ``s`` is the product of ``v[j]`` over the bits ``j`` set in
    ``s``; entry 0 (the empty monomial) is always 1.

    >>> lift_exact([1, 0]).tolist()
    [1, 1, 0, 0]
    """
    v = np.asarray(v, dtype=np.uint8).ravel()
    if v.size > MAX_EXACT_INPUTS:
        raise SizeGuardError(f"exact lifting of {v.size} inputs exceeds the guard of {MAX_EXACT_INPUTS}")
    out = np.ones(1, dtype=np.uint8)
    for bit in v:
        out = np.concatenate([out, out * bit])
    return out


class ExactLifter:
    """Exact lifting of sparse binary rows onto monomials of degree <= ``degree``.

    Full lifting (``degree=None``) indexes monomials by bitmask, matching
    :func:`lift_exact`.  Truncated lifting orders monomials by degree, then
    colexicographically within a degree.
    """

    def __init__(self, num_inputs: int, degree: int | None = None):
        self.num_inputs = int(num_inputs)
        self.full = degree is None or degree >= self.num_inputs
        self.degree = self.num_inputs if self.full else int(degree)
        if self.full and self.num_inputs > MAX_EXACT_INPUTS:
            raise SizeGuardError(
                f"full lifting of {self.num_inputs} inputs exceeds the guard of {MAX_EXACT_INPUTS}"
            )
        sizes = [math.comb(self.num_inputs, k) for k in range(self.degree + 1)]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.num_outputs = 1 << self.num_inputs if self.full else int(self._offsets[-1])
        if self.num_outputs > MAX_EXACT_OUTPUTS:
            raise SizeGuardError(f"lifting would produce {self.num_outputs} features")

    def _monomials(self, active: np.ndarray) -> list[int]:
        if self.full:
            masks = [0]
            for j in active:
                masks += [m | (1 << int(j)) for m in masks]
            return sorted(masks)
        cols = [0]
        if self.degree >= 1:
            cols.extend((1 + active).tolist())
        for k in range(2, self.degree + 1):
            base = int(self._offsets[k])
            for combo in itertools.combinations(active.tolist(), k):
                cols.append(base + sum(math.comb(c, i + 1) for i, c in enumerate(combo)))
        return sorted(cols)

    def transform(self, matrix) -> sp.csr_matrix:
        X = sp.csr_matrix(matrix)
        n_rows = X.shape[0]
        if not self.full and self.degree == 1:
            # constant column followed by the raw features
            active = X.copy()
            active.data = (active.data != 0).astype(np.float64)
            active.eliminate_zeros()
            ones = sp.csr_matrix(np.ones((n_rows, 1)))
            return sp.hstack([ones, active], format="csr")
        indptr = [0]
        indices: list[int] = []
        for i in range(n_rows):
            row = X.indices[X.indptr[i] : X.indptr[i + 1]][X.data[X.indptr[i] : X.indptr[i + 1]] != 0]
            indices.extend(self._monomials(np.sort(row)))
            indptr.append(len(indices))
        data = np.ones(len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(n_rows, self.num_outputs))


def circular_convolve(a: np.ndarray, b: np.ndarray, method: str = "auto") -> np.ndarray:
    """Circular convolution of integer arrays along the last axis.

    ``direct`` is exact integer arithmetic, ``fft`` rounds the transform
    result back to integers.  ``auto`` uses direct up to width 1024.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    m = a.shape[-1]
    if method == "auto":
        method = "direct" if m <= DIRECT_CONVOLUTION_MAX_WIDTH else "fft"
    if method == "direct":
        a2 = a.reshape(-1, m)
        b2 = b.reshape(-1, m)
        out = np.empty_like(a2)
        for i in range(a2.shape[0]):
            full = np.convolve(a2[i], b2[i])
            out[i, :] = full[:m]
            out[i, : m - 1] += full[m:]
        return out.reshape(a.shape)
    if method == "fft":
        prod = np.fft.rfft(a, axis=-1) * np.fft.rfft(b, axis=-1)
        return np.rint(np.fft.irfft(prod, n=m, axis=-1)).astype(np.int64)
    raise ValueError(f"unknown convolution method {method!r}")


class TensorSketch:
    """Degree-``d`` tensor sketch of binary vectors with a constant coordinate appended.

    ``d`` count sketches (hash ``h_i: J+1 -> [m]`` and sign ``s_i: J+1 -> {-1, 1}``,
    drawn as independent uniform lookup tables) are combined by circular
    convolution.  Randomness comes from numpy's PCG64 generator seeded with
    ``seed``; the same arguments always give the same map.
    """

    def __init__(self, num_inputs: int, degree: int, width: int, seed: int):
        self.num_inputs = int(num_inputs)
        self.degree = int(degree)
        self.width = int(width)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        n = self.num_inputs + 1
        self.hashes = rng.integers(0, self.width, size=(self.degree, n))
        self.signs = 2 * rng.integers(0, 2, size=(self.degree, n)) - 1
        self._maps = [
            sp.csr_matrix((self.signs[i].astype(np.float64), (np.arange(n), self.hashes[i])), shape=(n, self.width))
            for i in range(self.degree)
        ]

    def count_sketches(self, matrix) -> np.ndarray:
        if sp.issparse(matrix):
            X = sp.hstack([sp.csr_matrix(matrix), np.ones((matrix.shape[0], 1))], format="csr")
        else:
            X = np.asarray(matrix, dtype=np.float64)
            if X.ndim == 1:
                X = X[None, :]
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        if X.shape[1] != self.num_inputs + 1:
            raise ValueError(f"expected {self.num_inputs} inputs, got {X.shape[1] - 1}")
        out = np.empty((self.degree, X.shape[0], self.width), dtype=np.int64)
        for i, S in enumerate(self._maps):
            prod = X @ S
            prod = prod.toarray() if sp.issparse(prod) else np.asarray(prod)
            out[i] = np.rint(prod).astype(np.int64)
        return out

    def transform(self, matrix, method: str = "auto") -> np.ndarray:
        sketches = self.count_sketches(matrix)
        out = sketches[0]
        for i in range(1, self.degree):
            out = circular_convolve(out, sketches[i], method=method)
        return out


@functools.lru_cache(maxsize=32)
def _sketch_for(num_inputs: int, degree: int, width: int, seed: int) -> TensorSketch:
    return TensorSketch(num_inputs, degree, width, seed)


def lift_sketch(v, spec: LiftSpec) -> np.ndarray:
    """Sketch of a single binary vector, shape ``(spec.width,)``, integer-valued."""
    if spec.mode is not LiftMode.SKETCH:
        raise ValueError("lift_sketch needs a sketch LiftSpec")
    v = np.asarray(v, dtype=np.float64).ravel()
    sketch = _sketch_for(v.size, int(spec.degree), int(spec.width), int(spec.seed))
    return sketch.transform(v[None, :])[0]


def lift_features(store: FeatureStore, spec: LiftSpec) -> FeatureStore:
    """Apply ``spec`` to every row of ``store``."""
    if spec.mode is LiftMode.SKETCH:
        sketch = _sketch_for(store.num_features, int(spec.degree), int(spec.width), int(spec.seed))
        matrix = sketch.transform(store.matrix).astype(np.float64)
    else:
        matrix = ExactLifter(store.num_features, spec.degree).transform(store.matrix)
    return FeatureStore(store.shape, store.pairs, matrix, matrix.shape[1])


def pair_features(w_a, w_b) -> np.ndarray:
    """Features of a pair from two element vectors: per coordinate ``l`` an AND
    bit (index ``2l``) and an XOR bit (index ``2l + 1``)."""
    w_a = np.asarray(w_a, dtype=np.int64).ravel()
    w_b = np.asarray(w_b, dtype=np.int64).ravel()
    if w_a.shape != w_b.shape:
        raise ValueError(f"element vectors differ in length: {w_a.size} != {w_b.size}")
    out = np.empty(2 * w_a.size, dtype=np.uint8)
    out[0::2] = w_a * w_b
    out[1::2] = w_a + w_b - 2 * w_a * w_b
    return out


def pair_feature_matrix(elements, pairs) -> sp.csr_matrix:
    """Row ``i`` holds ``pair_features(elements[p0], elements[p1])`` for ``pairs[i] = (p0, p1)``."""
    W = sp.csr_matrix(elements)
    W.data = (W.data != 0).astype(np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    left = W[pairs[:, 0]]
    right = W[pairs[:, 1]]
    both = left.multiply(right).tocsr()
    either = (left + right - 2 * both).tocsr()
    both.eliminate_zeros()
    either.eliminate_zeros()
    n_rows, n_cols = len(pairs), W.shape[1]
    both_coo = both.tocoo()
    either_coo = either.tocoo()
    rows = np.concatenate([both_coo.row, either_coo.row])
    cols = np.concatenate([2 * both_coo.col, 2 * either_coo.col + 1])
    data = np.ones(rows.size)
    out = sp.csr_matrix((data, (rows, cols)), shape=(n_rows, 2 * n_cols))
    out.sort_indices()
    return out
