import itertools
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import labels_of, set_partitions
from relkit.core import equivalence_from_labels, order_from_sequence
from relkit.metrics import (
    MetricRow,
    PartitionView,
    PermutationView,
    cayley_distance,
    hamming_distance,
    kendall_distance,
    monte_carlo_baseline,
    pair_disagreement,
    rand_error,
    random_order_baseline,
    summarize,
    variation_of_information,
)


def brute_rand(p, q):
    n = len(p)
    pairs = list(itertools.combinations(range(n), 2))
    if not pairs:
        return 0.0
    return sum((p[a] == p[b]) != (q[a] == q[b]) for a, b in pairs) / len(pairs)


def brute_vi(p, q):
    n = len(p)
    vi = 0.0
    for i in set(p):
        for j in set(q):
            r = sum(1 for a in range(n) if p[a] == i and q[a] == j) / n
            if r > 0:
                pi = p.count(i) / n
                qj = q.count(j) / n
                vi -= r * (math.log2(r / pi) + math.log2(r / qj))
    return vi


def bfs_cayley(p, q):
    """Shortest transposition path between two sequences by breadth-first search."""
    start, goal = tuple(p), tuple(q)
    dist = {start: 0}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            return dist[cur]
        for i, j in itertools.combinations(range(len(cur)), 2):
            nxt = list(cur)
            nxt[i], nxt[j] = nxt[j], nxt[i]
            nxt = tuple(nxt)
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)


def seq_view(seq):
    return PermutationView.from_sequence(seq)


class TestPartitionMetrics:
    def test_examples(self):
        a = PartitionView.from_blocks([{0, 1}, {2}])
        b = PartitionView.from_blocks([{0}, {1, 2}])
        assert rand_error(a, b) == pytest.approx(2 / 3)
        assert rand_error(a, a) == 0 and variation_of_information(a, a) == 0
        one = PartitionView([0, 0, 0, 0])
        single = PartitionView([0, 1, 2, 3])
        assert variation_of_information(one, single) == pytest.approx(2.0)
        assert rand_error(one, single) == 1.0

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_exhaustive(self, n):
        parts = [labels_of(b, n) for b in set_partitions(range(n))]
        for p in parts:
            for q in parts:
                P, Q = PartitionView(p), PartitionView(q)
                assert rand_error(P, Q) == pytest.approx(brute_rand(p, q), abs=1e-12)
                assert variation_of_information(P, Q) == pytest.approx(brute_vi(p, q), abs=1e-12)

    def test_vi_triangle(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 12))
            p, q, r = (PartitionView(rng.integers(0, 4, n)) for _ in range(3))
            assert variation_of_information(p, r) <= (
                variation_of_information(p, q) + variation_of_information(q, r) + 1e-12
            )

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=10), st.data())
    def test_symmetry_and_labels_irrelevant(self, p, data):
        q = data.draw(st.lists(st.integers(0, 3), min_size=len(p), max_size=len(p)))
        P, Q = PartitionView(p), PartitionView(q)
        assert rand_error(P, Q) == pytest.approx(rand_error(Q, P))
        assert variation_of_information(P, Q) == pytest.approx(variation_of_information(Q, P))
        renamed = PartitionView([10 - v for v in p])
        assert rand_error(renamed, Q) == pytest.approx(rand_error(P, Q))

    def test_views(self):
        v = PartitionView.from_relation(equivalence_from_labels([1, 0, 1]))
        assert v.blocks == [{0, 2}, {1}]
        with pytest.raises(ValueError):
            PartitionView.from_blocks([{0}, {2}])
        with pytest.raises(ValueError):
            rand_error(PartitionView([0]), PartitionView([0, 0]))


class TestOrderMetrics:
    def test_examples(self):
        ident = seq_view([0, 1, 2, 3])
        rev = seq_view([3, 2, 1, 0])
        assert kendall_distance(ident, rev) == 6 and pair_disagreement(ident, rev) == 1.0
        assert cayley_distance(ident, rev) == 2
        assert hamming_distance(ident, rev) == 4
        swap = seq_view([1, 0, 2, 3])
        assert kendall_distance(ident, swap) == 1
        assert cayley_distance(ident, swap, normalized=True) == pytest.approx(1 / 3)
        assert hamming_distance(ident, swap, normalized=True) == 0.5

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_exhaustive(self, n):
        perms = list(itertools.permutations(range(n)))
        ident = perms[0]
        for p in perms:
            for q in perms:
                P, Q = seq_view(p), seq_view(q)
                kendall = sum(
                    (p.index(a) < p.index(b)) != (q.index(a) < q.index(b))
                    for a, b in itertools.combinations(range(n), 2)
                )
                assert kendall_distance(P, Q) == kendall
                assert hamming_distance(P, Q) == sum(x != y for x, y in zip(p, q))
                if p == ident or n <= 4:
                    assert cayley_distance(P, Q) == bfs_cayley(p, q)

    def test_from_relation(self):
        v = PermutationView.from_relation(order_from_sequence([2, 0, 1]))
        assert v.sequence.tolist() == [2, 0, 1]
        assert v.rank.tolist() == [1, 2, 0]
        with pytest.raises(ValueError):
            PermutationView([0, 0, 1])

    def test_small_n(self):
        one = seq_view([0])
        assert pair_disagreement(one, one) == 0.0
        assert cayley_distance(one, one, normalized=True) == 0.0


class TestBaselines:
    @pytest.mark.parametrize("metric", ["pair_disagreement", "cayley", "hamming"])
    @pytest.mark.parametrize("n", [2, 4, 7])
    def test_closed_form_vs_enumeration(self, metric, n):
        fn = {
            "pair_disagreement": pair_disagreement,
            "cayley": lambda p, q: cayley_distance(p, q, normalized=True),
            "hamming": lambda p, q: hamming_distance(p, q, normalized=True),
        }[metric]
        ident = seq_view(range(n))
        exact = np.mean([fn(ident, seq_view(p)) for p in itertools.permutations(range(n))])
        assert random_order_baseline(metric, n) == pytest.approx(exact)

    def test_monte_carlo_close(self):
        for metric in ("pair_disagreement", "cayley", "hamming"):
            mc = monte_carlo_baseline(metric, 10, shuffles=4000, seed=1)
            assert abs(mc - random_order_baseline(metric, 10)) < 0.02

    def test_unknown(self):
        with pytest.raises(ValueError):
            random_order_baseline("spearman", 4)


class TestSummaries:
    def test_summarize(self):
        assert summarize([2.0]) == (2.0, 0.0)
        mean, std = summarize([1.0, 2.0, 3.0])
        assert mean == 2.0 and std == pytest.approx(1.0)
        with pytest.raises(ValueError):
            summarize([])

    def test_row_format(self):
        row = MetricRow("i", 3, "vi", 1 / 3, 0.5)
        assert row.as_tuple() == ("i", 3, "vi", "0.333333333333", "0.5")
