"""Dataset ingestion: IDX images, sampled image pairs, sentence corpora."""

from __future__ import annotations

import collections
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from relkit.core import FeatureStore, order_from_sequence
from relkit.errors import ParseError, ShapeError
from relkit.io import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, read_idx
from relkit.lifting import pair_feature_matrix
from relkit.models import SufficientStats

__all__ = [
    "expand_pixels",
    "ingest_idx",
    "build_pair_dataset",
    "all_pairs_store",
    "SentenceDataset",
    "tokenize",
    "ingest_sentences",
    "synthetic_order_corpus",
    "planted_blocks",
]


def expand_pixels(images: np.ndarray, bit_expand: bool = True) -> sp.csr_matrix:
    """One row per image.  With ``bit_expand`` bit ``b`` of pixel ``p`` becomes
    feature ``8p + b`` (bit 0 least significant); otherwise feature ``p`` is
    ``pixel > 0``."""
    flat = np.asarray(images, dtype=np.uint8).reshape(len(images), -1)
    if not bit_expand:
        return sp.csr_matrix((flat > 0).astype(np.float64))
    # unpackbits yields bit 7 first; flip so column 8p + b holds bit b
    bits = np.unpackbits(flat[:, :, None], axis=2)[:, :, ::-1]
    return sp.csr_matrix(bits.reshape(len(flat), -1).astype(np.float64))


def ingest_idx(images_path, labels_path, bit_expand: bool = True) -> tuple[FeatureStore, np.ndarray]:
    """Element features (shape ``(n, 1)``, one row per image) and labels."""
    images = read_idx(images_path, expect_magic=IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, expect_magic=IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    matrix = expand_pixels(images, bit_expand)
    return FeatureStore.grid((matrix.shape[0], 1), matrix), labels.astype(np.int64)


def _element_matrix(elements) -> sp.csr_matrix:
    if isinstance(elements, FeatureStore):
        return sp.csr_matrix(elements.matrix)
    return sp.csr_matrix(elements)


def _unrank_pairs(k: np.ndarray, n: int) -> np.ndarray:
    """Map flat indices of the row-major upper triangle (``a < b``) to pairs."""
    k = np.asarray(k, dtype=np.int64)
    # row a starts at offset a*n - a*(a+1)/2 - ... solved for a, then corrected
    m = n * (n - 1) // 2
    r = m - 1 - k
    j = ((np.sqrt(8 * r.astype(np.float64) + 1) - 1) // 2).astype(np.int64)
    a = n - 2 - j
    start = a * (2 * n - a - 1) // 2
    # guard the float sqrt against off-by-one at row boundaries
    low = k < start
    a[low] -= 1
    start = a * (2 * n - a - 1) // 2
    high = k >= start + (n - 1 - a)
    a[high] += 1
    start = a * (2 * n - a - 1) // 2
    b = a + 1 + (k - start)
    return np.stack([a, b], axis=1)


def _pair_store(X: sp.csr_matrix, pairs: np.ndarray) -> FeatureStore:
    n = X.shape[0]
    matrix = pair_feature_matrix(X, pairs)
    return FeatureStore((n, n), pairs, matrix, matrix.shape[1])


def build_pair_dataset(
    elements,
    labels: Sequence[int],
    n_pairs: int,
    stratified: bool = True,
    seed: int | None = 0,
) -> tuple[FeatureStore, np.ndarray]:
    """Sample ``n_pairs`` distinct unordered pairs ``a < a'`` without replacement.

    Pair features come from :func:`relkit.lifting.pair_feature_matrix` and
    ``y = 1`` iff the two labels agree.  Stratified samples hold
    ``ceil(n_pairs / 2)`` positive pairs and the rest negative.  Rows are
    sorted by pair.
    """
    X = _element_matrix(elements)
    labels = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"{labels.size} labels for {n} elements")
    total = n * (n - 1) // 2
    if not 0 <= n_pairs <= total:
        raise ValueError(f"cannot draw {n_pairs} pairs from {total}")
    rng = np.random.default_rng(seed)
    if not stratified:
        pairs = _unrank_pairs(np.sort(rng.choice(total, size=n_pairs, replace=False)), n)
    else:
        n_pos = (n_pairs + 1) // 2
        n_neg = n_pairs - n_pos
        counts = np.bincount(labels)
        available_pos = int(np.sum(counts * (counts - 1) // 2))
        if n_pos > available_pos:
            raise ValueError(f"only {available_pos} same-label pairs, {n_pos} needed for stratification")
        if n_neg > total - available_pos:
            raise ValueError(f"only {total - available_pos} distinct-label pairs, {n_neg} needed")
        pos = _sample_same_label(labels, n_pos, rng)
        neg = _sample_distinct_label(labels, n_neg, rng, total - available_pos)
        pairs = np.concatenate([pos, neg])
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    y = (labels[pairs[:, 0]] == labels[pairs[:, 1]]).astype(np.uint8)
    return _pair_store(X, pairs), y


def _sample_same_label(labels: np.ndarray, k: int, rng) -> np.ndarray:
    groups = [np.flatnonzero(labels == v) for v in np.unique(labels)]
    sizes = np.array([g.size * (g.size - 1) // 2 for g in groups], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat = np.sort(rng.choice(int(offsets[-1]), size=k, replace=False))
    out = np.empty((k, 2), dtype=np.int64)
    which = np.searchsorted(offsets, flat, side="right") - 1
    for g, members in enumerate(groups):
        sel = which == g
        if sel.any():
            local = _unrank_pairs(flat[sel] - offsets[g], members.size)
            out[sel] = members[local]
    return out


def _sample_distinct_label(labels: np.ndarray, k: int, rng, available: int) -> np.ndarray:
    n = labels.size
    total = n * (n - 1) // 2
    if k == 0:
        return np.empty((0, 2), dtype=np.int64)
    if 2 * k > available:
        # dense regime: enumerate every distinct-label pair
        a, b = np.triu_indices(n, 1)
        keep = labels[a] != labels[b]
        cand = np.stack([a[keep], b[keep]], axis=1)
        return cand[np.sort(rng.choice(cand.shape[0], size=k, replace=False))]
    chosen: dict[int, None] = {}
    while len(chosen) < k:
        draw = rng.integers(0, total, size=2 * (k - len(chosen)) + 16)
        pairs = _unrank_pairs(draw, n)
        for flat, (a, b) in zip(draw.tolist(), pairs.tolist()):
            if labels[a] != labels[b] and flat not in chosen:
                chosen[flat] = None
                if len(chosen) == k:
                    break
    return _unrank_pairs(np.array(list(chosen), dtype=np.int64), n)


def all_pairs_store(elements) -> FeatureStore:
    """Pair features for every ordered pair of ``A x A`` in row-major order."""
    X = _element_matrix(elements)
    n = X.shape[0]
    aa, bb = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    pairs = np.stack([aa.ravel(), bb.ravel()], axis=1)
    return _pair_store(X, pairs)


# -- sentences ----------------------------------------------------------------


def tokenize(line: str) -> list[str]:
    """Whitespace split; case and punctuation are kept as they are."""
    return line.split()


@dataclass(frozen=True)
class SentenceDataset:
    """Sentences over a dictionary; ``sentences[i][t]`` is the word id of token ``t``.

    Word ``j`` followed (not necessarily adjacently) by word ``j'`` activates
    pair feature ``j * k + j'`` where ``k`` is the dictionary size.
    """

    dictionary: tuple[str, ...]
    sentences: tuple[np.ndarray, ...]

    @property
    def k(self) -> int:
        return len(self.dictionary)

    @property
    def num_features(self) -> int:
        return self.k * self.k

    def __len__(self) -> int:
        return len(self.sentences)

    def words(self, i: int) -> list[str]:
        return [self.dictionary[j] for j in self.sentences[i]]

    def features(self, i: int, diagonal: bool = True) -> FeatureStore:
        """Indicator features for every ordered occurrence pair of sentence ``i``."""
        w = self.sentences[i]
        n = w.size
        aa, bb = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        keep = np.ones((n, n), dtype=bool) if diagonal else ~np.eye(n, dtype=bool)
        pairs = np.stack([aa[keep], bb[keep]], axis=1)
        cols = w[pairs[:, 0]] * self.k + w[pairs[:, 1]]
        matrix = sp.csr_matrix(
            (np.ones(len(pairs)), (np.arange(len(pairs)), cols)), shape=(len(pairs), self.num_features)
        )
        return FeatureStore((n, n), pairs, matrix, self.num_features)

    def observed_order(self, i: int):
        """The sentence as written: occurrence ``t`` at position ``t``."""
        return order_from_sequence(np.arange(self.sentences[i].size))

    def precedence_stats(self, indices: Sequence[int] | None = None) -> SufficientStats:
        """Counts for Bernoulli learning over the off-diagonal occurrence pairs.

        ``m_plus[j * k + j']`` counts occurrences of ``j`` before ``j'``;
        ``m_minus`` counts the same feature on pairs in the other order.
        """
        k = self.k
        before = np.zeros((k, k), dtype=np.int64)
        for i in range(len(self)) if indices is None else indices:
            w = self.sentences[i]
            a, b = np.triu_indices(w.size, 1)
            np.add.at(before, (w[a], w[b]), 1)
        # an ordered pair (a, b) with a after b has feature (w_a, w_b) and y = 0
        return SufficientStats(m_plus=before.ravel(), m_minus=before.T.ravel())

    def training_store(self, indices: Sequence[int] | None = None) -> tuple[FeatureStore, np.ndarray]:
        """All off-diagonal occurrence pairs of the chosen sentences, stacked
        block-diagonally, with targets from the observed order."""
        indices = list(range(len(self))) if indices is None else list(indices)
        blocks, ys, offset = [], [], 0
        for i in indices:
            st = self.features(i, diagonal=False)
            blocks.append((st.pairs + offset, st.matrix))
            ys.append((st.pairs[:, 0] < st.pairs[:, 1]).astype(np.uint8))
            offset += st.shape[0]
        if not blocks:
            raise ValueError("no sentences selected")
        pairs = np.concatenate([p for p, _ in blocks])
        matrix = sp.vstack([m for _, m in blocks], format="csr")
        return FeatureStore((offset, offset), pairs, matrix, self.num_features), np.concatenate(ys)


def _read_lines(corpus) -> list[str]:
    if isinstance(corpus, (list, tuple)):
        return list(corpus)
    return Path(corpus).read_text(encoding="utf-8").splitlines()


def ingest_sentences(corpus, dictionary_size: int, min_length: int = 1) -> SentenceDataset:
    """Dictionary of the ``dictionary_size`` most frequent words (ties by word)
    and the sentences made only of dictionary words.

    ``corpus`` is a UTF-8 file path with one sentence per line, or a list of
    lines.
    """
    if dictionary_size < 1:
        raise ValueError("dictionary_size must be >= 1")
    lines = [tokenize(line) for line in _read_lines(corpus)]
    lines = [t for t in lines if t]
    counts = collections.Counter(w for t in lines for w in t)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:dictionary_size]
    dictionary = tuple(sorted(w for w, _ in ranked))
    index = {w: j for j, w in enumerate(dictionary)}
    sentences = tuple(
        np.array([index[w] for w in t], dtype=np.int64)
        for t in lines
        if len(t) >= min_length and all(w in index for w in t)
    )
    if not sentences:
        raise ParseError("no sentence survives dictionary filtering")
    return SentenceDataset(dictionary, sentences)


def synthetic_order_corpus(
    n_sentences: int,
    vocabulary: int = 20,
    length: int = 8,
    noise: float = 0.1,
    seed: int | None = 0,
) -> list[str]:
    """Sentences of ``length`` distinct words ``w00, w01, ...`` written in the
    planted order of their index; a ``noise`` fraction is shuffled uniformly."""
    if length > vocabulary:
        raise ValueError("length cannot exceed the vocabulary")
    rng = np.random.default_rng(seed)
    width = max(2, int(math.log10(max(vocabulary - 1, 1))) + 1)
    out = []
    for _ in range(n_sentences):
        words = np.sort(rng.choice(vocabulary, size=length, replace=False))
        if rng.random() < noise:
            words = rng.permutation(words)
        out.append(" ".join(f"w{j:0{width}d}" for j in words))
    return out


def planted_blocks(
    n_elements: int,
    n_blocks: int,
    n_features: int,
    flip: float = 0.0,
    seed: int | None = 0,
    prototype_seed: int = 0,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Binary elements drawn around one random prototype per block.

    Each element copies its block's prototype and flips every bit with
    probability ``flip``.  Prototypes depend only on ``prototype_seed`` so
    separate draws (say train and test) share them.  Labels cycle through
    the blocks, so block sizes differ by at most one.
    """
    protos = np.random.default_rng(prototype_seed).integers(0, 2, size=(n_blocks, n_features))
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_elements) % n_blocks)
    X = protos[labels] ^ (rng.random((n_elements, n_features)) < flip)
    return sp.csr_matrix(X.astype(np.float64)), labels.astype(np.int64)
