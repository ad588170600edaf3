"""Correlation clustering: minimize ``sum c_ab y_ab`` over equivalence relations.

Because an equivalence relation is reflexive and symmetric, a cost matrix is
folded into pair weights ``s_aa' = c_aa' + c_a'a`` plus the constant
``sum_a c_aa``.  A partition then costs the constant plus ``s`` summed over
co-clustered unordered pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relkit.core import ConstraintClass, CostMatrix, Evidence, Relation, equivalence_from_labels
from relkit.errors import InfeasibleEvidenceError, ShapeError, SizeGuardError
from relkit.solvers.report import SolveMethod, SolveReport, Stopwatch, make_report

MAX_EXACT_PARTITION = 12
_EPS = 1e-9


def fold_costs(costs: CostMatrix) -> tuple[np.ndarray, float]:
    c = costs.costs
    if c.shape[0] != c.shape[1]:
        raise ShapeError(f"partitioning needs a square cost matrix, got {c.shape}")
    s = c + c.T
    np.fill_diagonal(s, 0.0)
    return s, float(np.trace(c))


def partition_cost(labels, weights: np.ndarray, constant: float = 0.0) -> float:
    lab = np.asarray(labels)
    same = np.triu(lab[:, None] == lab[None, :], k=1)
    return constant + float(weights[same].sum())


def canonical_labels(labels) -> np.ndarray:
    """Relabel blocks in order of first occurrence."""
    lab = np.asarray(labels)
    out = np.empty(lab.size, dtype=np.int64)
    seen: dict = {}
    for i, v in enumerate(lab.tolist()):
        out[i] = seen.setdefault(v, len(seen))
    return out


@dataclass
class _PartitionConstraints:
    component: np.ndarray  # root element of each element's must-link component
    cannot: np.ndarray  # symmetric boolean matrix of cannot-link pairs


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def partition_constraints(n: int, evidence: Evidence | None) -> _PartitionConstraints:
    parent = list(range(n))
    cannot = np.zeros((n, n), dtype=bool)
    if evidence:
        evidence.check_bounds((n, n))
        pins = dict(evidence.pinned)
        for (a, b), v in sorted(pins.items()):
            if a == b:
                if v == 0:
                    raise InfeasibleEvidenceError(f"pair {(a, b)} pinned to 0 contradicts reflexivity")
                continue
            if pins.get((b, a), v) != v:
                raise InfeasibleEvidenceError(f"pairs {(a, b)} and {(b, a)} pinned differently")
            if v == 1:
                ra, rb = _find(parent, a), _find(parent, b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            else:
                cannot[a, b] = cannot[b, a] = True
    comp = np.array([_find(parent, i) for i in range(n)], dtype=np.int64)
    clash = np.argwhere(cannot & (comp[:, None] == comp[None, :]))
    if clash.size:
        a, b = (int(v) for v in clash[0])
        raise InfeasibleEvidenceError(f"elements {a} and {b} are both must-linked and cannot-linked")
    return _PartitionConstraints(comp, cannot)


def solve_partition_exact(costs: CostMatrix, evidence: Evidence | None = None) -> SolveReport:
    """Certified optimum by depth-first enumeration of restricted growth strings.

    Element ``i`` joins an existing block ``0..k-1`` or opens block ``k``, in
    that order, so leaves are visited in lexicographic order and the first
    minimizer found is returned.  Branches whose cost plus the sum of all
    remaining negative weights cannot beat the incumbent are cut.
    """
    clock = Stopwatch()
    s, constant = fold_costs(costs)
    n = s.shape[0]
    if n > MAX_EXACT_PARTITION:
        raise SizeGuardError(f"exact partitioning is limited to {MAX_EXACT_PARTITION} elements, got {n}")
    cons = partition_constraints(n, evidence)
    must_prev = [[j for j in range(i) if cons.component[j] == cons.component[i]] for i in range(n)]
    cannot_prev = [[j for j in range(i) if cons.cannot[i, j]] for i in range(n)]
    neg = np.minimum(s, 0.0)
    # tail[i]: lower bound on pairs not yet decided once elements < i are placed
    tail = [float(np.triu(neg, k=1)[:, i:].sum()) for i in range(n)] + [0.0]
    w = s.tolist()

    labels = [0] * n
    blocks: list[list[int]] = []
    best = [np.inf, None]
    leaves = [0]

    def visit(i: int, value: float) -> None:
        tol = _EPS * max(1.0, abs(best[0])) if best[1] is not None else 0.0
        if value + tail[i] > best[0] + tol:
            return
        if i == n:
            leaves[0] += 1
            if best[1] is None or value < best[0] - tol:
                best[0], best[1] = value, labels.copy()
            return
        forced = labels[must_prev[i][0]] if must_prev[i] else None
        for k in range(len(blocks) + 1):
            if forced is not None and k != forced:
                continue
            if k < len(blocks):
                if any(labels[j] == k for j in cannot_prev[i]):
                    continue
                members = blocks[k]
                labels[i] = k
                members.append(i)
                visit(i + 1, value + sum(w[i][j] for j in members[:-1]))
                members.pop()
            else:
                labels[i] = k
                blocks.append([i])
                visit(i + 1, value)
                blocks.pop()

    visit(0, 0.0)
    if best[1] is None:
        raise InfeasibleEvidenceError("no partition satisfies the evidence")
    relation = equivalence_from_labels(best[1])
    return make_report(relation, costs, SolveMethod.PARTITION_EXACT, clock, leaves[0])


def connected_components_init(s: np.ndarray, cons: _PartitionConstraints) -> np.ndarray:
    """Components of the graph joining pairs with negative folded cost.

    Edges are merged from most negative upward and merges that would join a
    cannot-linked pair are skipped; with no evidence this is plain connected
    components.
    """
    n = s.shape[0]
    parent = list(range(n))
    for i in range(n):
        r = _find(parent, i)
        c = int(cons.component[i])
        parent[max(r, c)] = min(r, c)
    iu, ju = np.triu_indices(n, k=1)
    vals = s[iu, ju]
    order = np.lexsort((ju, iu, vals))
    members = {}
    for i in range(n):
        members.setdefault(_find(parent, i), []).append(i)
    for e in order:
        if vals[e] >= 0:
            break
        ra, rb = _find(parent, int(iu[e])), _find(parent, int(ju[e]))
        if ra == rb:
            continue
        if cons.cannot[np.ix_(members[ra], members[rb])].any():
            continue
        lo, hi = min(ra, rb), max(ra, rb)
        parent[hi] = lo
        members[lo] = members[lo] + members.pop(hi)
    return canonical_labels([_find(parent, i) for i in range(n)])


class _KLState:
    """Kernighan-Lin state over must-link components ("nodes")."""

    def __init__(self, t: np.ndarray, forbid: np.ndarray, labels: np.ndarray):
        self.t = t
        self.forbid = forbid.astype(np.int64)
        self.labels = canonical_labels(labels)
        k = int(self.labels.max()) + 1
        member = np.zeros((t.shape[0], k))
        member[np.arange(t.shape[0]), self.labels] = 1.0
        self.w = t @ member  # w[u, k]: weight between node u and cluster k
        self.f = self.forbid @ member.astype(np.int64)  # cannot-link counts
        self.size = member.sum(axis=0).astype(np.int64)

    def _add_cluster(self):
        n = self.t.shape[0]
        self.w = np.hstack([self.w, np.zeros((n, 1))])
        self.f = np.hstack([self.f, np.zeros((n, 1), dtype=np.int64)])
        self.size = np.append(self.size, 0)

    def move(self, u: int, target: int) -> None:
        if target == self.size.size:
            self._add_cluster()
        src = self.labels[u]
        self.w[:, src] -= self.t[:, u]
        self.w[:, target] += self.t[:, u]
        self.f[:, src] -= self.forbid[:, u]
        self.f[:, target] += self.forbid[:, u]
        self.size[src] -= 1
        self.size[target] += 1
        self.labels[u] = target

    def gains(self, locked: np.ndarray) -> np.ndarray:
        """Cost decrease of moving each node to each cluster; last column is a new cluster."""
        n = self.t.shape[0]
        own = self.w[np.arange(n), self.labels]
        g = np.full((n, self.size.size + 1), -np.inf)
        g[:, :-1] = own[:, None] - self.w
        bad = (self.f > 0) | (self.size[None, :] == 0)
        bad[np.arange(n), self.labels] = True
        g[:, :-1][bad] = -np.inf
        alone = self.size[self.labels] == 1
        g[:, -1] = np.where(alone, -np.inf, own)
        g[locked] = -np.inf
        return g

    def compact(self) -> None:
        self.__init__(self.t, self.forbid, self.labels)


def _kl_round(state: _KLState, eps: float) -> tuple[float, int]:
    n = state.t.shape[0]
    locked = np.zeros(n, dtype=bool)
    moves: list[tuple[int, int]] = []
    total, best, best_len = 0.0, 0.0, 0
    for _ in range(n):
        g = state.gains(locked)
        flat = int(np.argmax(g))
        u, k = divmod(flat, g.shape[1])
        if not np.isfinite(g[u, k]):
            break
        moves.append((u, int(state.labels[u])))
        state.move(u, k if k < g.shape[1] - 1 else state.size.size)
        locked[u] = True
        total += float(g[u, k])
        if total > best + eps:
            best, best_len = total, len(moves)
    for u, src in reversed(moves[best_len:]):
        state.move(u, src)
    state.compact()
    return best, best_len


def _merge_pass(state: _KLState, eps: float) -> tuple[float, int]:
    gained, merges = 0.0, 0
    while True:
        k = state.size.size
        member = np.zeros((state.t.shape[0], k))
        member[np.arange(state.t.shape[0]), state.labels] = 1.0
        between = member.T @ state.w
        blocked = (member.T @ state.f) > 0
        gain = -between
        gain[np.tril_indices(k)] = -np.inf
        gain[blocked] = -np.inf
        flat = int(np.argmax(gain))
        p, q = divmod(flat, k)
        if not gain[p, q] > eps:
            return gained, merges
        for u in np.flatnonzero(state.labels == q):
            state.move(int(u), p)
        state.compact()
        gained += float(gain[p, q])
        merges += 1


def solve_partition_kl(
    costs: CostMatrix,
    evidence: Evidence | None = None,
    init=None,
    seed: int | None = None,
    max_rounds: int = 10_000,
) -> SolveReport:
    """Kernighan-Lin local search for correlation clustering.

    Each round greedily applies the best single-node move (to another cluster
    or to a new one), locking the moved node, until every node has moved; the
    round keeps only the prefix of moves with the largest total gain.  Cluster
    merges with positive gain are then applied greedily.  Rounds repeat until
    one improves nothing, so the objective never increases.  Ties go to the
    smallest node, then the smallest cluster.

    ``init`` is a label vector or ``"components"`` (default: connected
    components of the negative-cost graph) or ``"random"``, which draws a
    random partition from ``seed``.  Must-linked elements always move together.
    """
    clock = Stopwatch()
    s, constant = fold_costs(costs)
    n = s.shape[0]
    cons = partition_constraints(n, evidence)
    if init is None or (isinstance(init, str) and init == "components"):
        labels = connected_components_init(s, cons)
    elif isinstance(init, str) and init == "random":
        rng = np.random.default_rng(seed)
        labels = canonical_labels(rng.integers(0, max(1, n // 2), size=n))
        # repair the random draw against the evidence
        labels = _repair(labels, cons)
    else:
        labels = canonical_labels(init)
        if labels.shape != (n,):
            raise ShapeError(f"init has {labels.size} labels for {n} elements")
        if not _satisfies(labels, cons):
            raise InfeasibleEvidenceError("initial partition violates the evidence")

    roots, node_of = np.unique(cons.component, return_inverse=True)
    n_nodes = roots.size
    member = np.zeros((n, n_nodes))
    member[np.arange(n), node_of] = 1.0
    t = member.T @ s @ member
    np.fill_diagonal(t, 0.0)
    forbid = (member.T @ cons.cannot.astype(float) @ member) > 0
    np.fill_diagonal(forbid, False)
    node_labels = np.array([labels[np.flatnonzero(node_of == u)[0]] for u in range(n_nodes)])

    state = _KLState(t, forbid, node_labels)
    eps = _EPS * max(1.0, float(np.abs(t).sum()))
    rounds = moves = merges = 0
    while rounds < max_rounds:
        rounds += 1
        gained, accepted = _kl_round(state, eps)
        merged, n_merges = _merge_pass(state, eps)
        moves += accepted
        merges += n_merges
        if gained <= eps and merged <= eps:
            break
    final = state.labels[node_of]
    relation = equivalence_from_labels(final)
    return make_report(
        relation, costs, SolveMethod.PARTITION_KL, clock, moves + merges, rounds=rounds, merges=merges
    )


def _satisfies(labels: np.ndarray, cons: _PartitionConstraints) -> bool:
    same = labels[:, None] == labels[None, :]
    same_comp = cons.component[:, None] == cons.component[None, :]
    return bool(np.all(same[same_comp]) and not np.any(same & cons.cannot))


def _repair(labels: np.ndarray, cons: _PartitionConstraints) -> np.ndarray:
    labels = labels.copy()
    n = labels.size
    for i in range(n):
        labels[i] = labels[cons.component[i]]
    nxt = int(labels.max()) + 1
    for i in range(n):
        if cons.cannot[i][labels == labels[i]].any():
            group = cons.component == cons.component[i]
            labels[group] = nxt
            nxt += 1
    return canonical_labels(labels)
