"""Linear ordering: minimize ``sum c_ab y_ab`` over linear orders.

An order is handled as a sequence; ``a`` placed before ``a'`` sets
``y_aa' = 1``, so a sequence costs ``sum_a c_aa`` plus ``c_aa'`` over every
pair with ``a`` earlier.
"""

from __future__ import annotations

import heapq

import numpy as np

from relkit.core import CostMatrix, Evidence, order_from_sequence
from relkit.errors import InfeasibleEvidenceError, ShapeError, SizeGuardError
from relkit.solvers.report import SolveMethod, SolveReport, Stopwatch, make_report

MAX_EXACT_ORDER = 18
_EPS = 1e-9


def sequence_cost(sequence, costs: np.ndarray) -> float:
    seq = np.asarray(sequence)
    pos = np.empty(seq.size, dtype=np.int64)
    pos[seq] = np.arange(seq.size)
    before = pos[:, None] < pos[None, :]
    return float(np.trace(costs) + costs[before].sum())


def precedence_constraints(n: int, evidence: Evidence | None) -> list[set[int]]:
    """``preds[v]``: elements pinned to come before ``v``.  Raises on cycles."""
    preds: list[set[int]] = [set() for _ in range(n)]
    if evidence:
        evidence.check_bounds((n, n))
        for (a, b), v in evidence.pinned.items():
            if a == b:
                if v == 0:
                    raise InfeasibleEvidenceError(f"pair {(a, b)} pinned to 0 contradicts reflexivity")
                continue
            if v == 1:
                preds[b].add(a)
            else:
                preds[a].add(b)
    # Kahn's algorithm; a leftover node sits on a cycle
    indeg = [len(p) for p in preds]
    succ: list[list[int]] = [[] for _ in range(n)]
    for v, ps in enumerate(preds):
        for u in ps:
            succ[u].append(v)
    ready = [v for v in range(n) if indeg[v] == 0]
    seen = 0
    while ready:
        u = ready.pop()
        seen += 1
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    if seen != n:
        stuck = min(v for v in range(n) if indeg[v] > 0)
        raise InfeasibleEvidenceError(f"evidence orders element {stuck} on a cycle")
    return preds


def _square(costs: CostMatrix) -> np.ndarray:
    c = costs.costs
    if c.shape[0] != c.shape[1]:
        raise ShapeError(f"ordering needs a square cost matrix, got {c.shape}")
    return c


def solve_order_exact(costs: CostMatrix, evidence: Evidence | None = None) -> SolveReport:
    """Certified optimum by dynamic programming over subsets (Held-Karp style).

    ``rest[P]`` is the cheapest way to order the complement of the already
    placed set ``P`` after it.  The order is rebuilt front to back, placing at
    each step the smallest element that stays optimal, so the result is the
    lexicographically smallest optimal sequence.
    """
    clock = Stopwatch()
    c = _square(costs)
    n = c.shape[0]
    if n > MAX_EXACT_ORDER:
        raise SizeGuardError(f"exact ordering is limited to {MAX_EXACT_ORDER} elements, got {n}")
    preds = precedence_constraints(n, evidence)
    pred_mask = np.array([sum(1 << u for u in p) for p in preds], dtype=np.int64)
    size = 1 << n
    masks = np.arange(size, dtype=np.int64)
    # entry[v][P] = sum of c[u, v] over u in P: cost of placing v right after P
    entry = np.empty((n, size))
    for v in range(n):
        arr = np.zeros(1)
        for k in range(n):
            arr = np.concatenate([arr, arr + c[k, v]])
        entry[v] = arr
    popcount = np.bitwise_count(masks) if hasattr(np, "bitwise_count") else np.array(
        [bin(m).count("1") for m in range(size)]
    )
    rest = np.full(size, np.inf)
    rest[size - 1] = 0.0
    for layer in range(n - 1, -1, -1):
        P = masks[popcount == layer]
        best = np.full(P.size, np.inf)
        for v in range(n):
            bit = 1 << v
            ok = ((P & bit) == 0) & ((P & pred_mask[v]) == pred_mask[v])
            cand = np.where(ok, entry[v, P] + rest[P | bit], np.inf)
            np.minimum(best, cand, out=best)
        rest[P] = best
    if not np.isfinite(rest[0]):
        raise InfeasibleEvidenceError("no linear order satisfies the evidence")
    seq, placed = [], 0
    tol = _EPS * max(1.0, abs(rest[0]))
    for _ in range(n):
        target = rest[placed]
        for v in range(n):
            bit = 1 << v
            if placed & bit or (placed & int(pred_mask[v])) != int(pred_mask[v]):
                continue
            if entry[v, placed] + rest[placed | bit] <= target + tol:
                seq.append(v)
                placed |= bit
                break
    relation = order_from_sequence(seq)
    return make_report(relation, costs, SolveMethod.ORDER_EXACT_DP, clock, size, sequence=seq)


def initial_sequence(c: np.ndarray, preds: list[set[int]]) -> list[int]:
    """Ascending off-diagonal row sum, ties by index, subject to pinned precedences."""
    n = c.shape[0]
    row = c.sum(axis=1) - np.diag(c)
    indeg = [len(p) for p in preds]
    succ: list[list[int]] = [[] for _ in range(n)]
    for v, ps in enumerate(preds):
        for u in ps:
            succ[u].append(v)
    heap = [(row[v], v) for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    seq = []
    while heap:
        _, u = heapq.heappop(heap)
        seq.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, (row[v], v))
    return seq


def solve_order_local(
    costs: CostMatrix,
    evidence: Evidence | None = None,
    seed: int | None = None,
    init=None,
    max_passes: int = 10_000,
) -> SolveReport:
    """Insertion local search.

    Starting from ``init`` (or ascending row sums), each element in index
    order is relocated to its best position if that strictly lowers the cost;
    passes repeat until no relocation helps.  ``seed`` is accepted for
    interface symmetry: the search is deterministic.
    """
    clock = Stopwatch()
    c = _square(costs)
    n = c.shape[0]
    preds = precedence_constraints(n, evidence)
    succs: list[set[int]] = [set() for _ in range(n)]
    for v, ps in enumerate(preds):
        for u in ps:
            succs[u].add(v)
    if init is None:
        seq = initial_sequence(c, preds)
    else:
        seq = [int(v) for v in init]
        if sorted(seq) != list(range(n)):
            raise ValueError("init must be a permutation of the elements")
        pos0 = {v: i for i, v in enumerate(seq)}
        if any(pos0[u] > pos0[v] for v in range(n) for u in preds[v]):
            raise InfeasibleEvidenceError("initial order violates the evidence")
    seq_arr = np.array(seq, dtype=np.int64)
    eps = _EPS * max(1.0, float(np.abs(c).sum()))
    moves = passes = 0
    improved = True
    while improved and passes < max_passes:
        improved = False
        passes += 1
        for e in range(n):
            i = int(np.flatnonzero(seq_arr == e)[0])
            delta = np.full(n, np.inf)
            delta[i] = 0.0
            # later positions: e jumps over seq[i+1..j]
            if i + 1 < n:
                later = seq_arr[i + 1 :]
                step = c[later, e] - c[e, later]
                cum = np.cumsum(step)
                blocked = np.array([w in succs[e] for w in later])
                if blocked.any():
                    cum[int(np.argmax(blocked)) :] = np.inf
                delta[i + 1 :] = cum
            if i > 0:
                earlier = seq_arr[:i][::-1]
                step = c[e, earlier] - c[earlier, e]
                cum = np.cumsum(step)
                blocked = np.array([w in preds[e] for w in earlier])
                if blocked.any():
                    cum[int(np.argmax(blocked)) :] = np.inf
                delta[:i] = cum[::-1]
            j = int(np.argmin(delta))
            if delta[j] < -eps:
                seq_arr = np.insert(np.delete(seq_arr, i), j, e)
                moves += 1
                improved = True
    relation = order_from_sequence(seq_arr)
    return make_report(
        relation, costs, SolveMethod.ORDER_LOCAL_SEARCH, clock, moves, passes=passes, sequence=seq_arr.tolist()
    )
