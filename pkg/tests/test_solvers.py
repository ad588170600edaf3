import numpy as np
import pytest
import scipy.sparse as sp

from conftest import all_permutations, labels_of, set_partitions
from relkit.core import (
    ConstraintClass,
    CostMatrix,
    Evidence,
    FeatureStore,
    Relation,
    equivalence_from_labels,
    order_from_sequence,
    relation_objective,
    validate_relation,
)
from relkit.errors import InfeasibleEvidenceError, ShapeError, SizeGuardError
from relkit.models import bernoulli_objective, learn_bernoulli
from relkit.solvers import (
    SolveMethod,
    solve,
    solve_alternating,
    solve_map,
    solve_order_exact,
    solve_order_local,
    solve_partition_exact,
    solve_partition_kl,
    solve_unconstrained,
)


def random_costs(g, n, m=None, scale=1.0):
    return CostMatrix(g.normal(size=(n, m or n)) * scale)


def brute_partition(c, evidence=None):
    n = c.shape[0]
    best = np.inf
    for blocks in set_partitions(range(n)):
        r = equivalence_from_labels(labels_of(blocks, n))
        if evidence and not evidence.agrees_with(r):
            continue
        best = min(best, relation_objective(r, c))
    return best


def brute_order(c, evidence=None):
    best = np.inf
    for perm in all_permutations(c.shape[0]):
        r = order_from_sequence(perm)
        if evidence and not evidence.agrees_with(r):
            continue
        best = min(best, relation_objective(r, c))
    return best


class TestMap:
    def test_example(self):
        rep = solve_map(CostMatrix([[0.5, -1.0, 0.2], [0.0, 0.0, 3.0]]))
        assert rep.relation.bits.tolist() == [[0, 1, 0], [1, 0, 0]]
        assert rep.certified_optimal and rep.method is SolveMethod.MAP_ARGMAX

    def test_brute_force(self, rng):
        for _ in range(30):
            c = random_costs(rng, 3, 3)
            best = min(
                relation_objective(Relation((3, 3), np.eye(3, dtype=np.uint8)[list(choice)], ConstraintClass.MAP), c)
                for choice in np.ndindex(3, 3, 3)
            )
            assert solve_map(c).objective == pytest.approx(best)

    def test_pins(self):
        c = CostMatrix([[0.0, 1.0, 2.0]])
        assert solve_map(c, Evidence({(0, 0): 0})).relation.bits.tolist() == [[0, 1, 0]]
        assert solve_map(c, Evidence({(0, 2): 1})).relation.bits.tolist() == [[0, 0, 1]]
        with pytest.raises(InfeasibleEvidenceError):
            solve_map(c, Evidence({(0, 0): 1, (0, 1): 1}))
        with pytest.raises(InfeasibleEvidenceError):
            solve_map(c, Evidence({(0, 0): 0, (0, 1): 0, (0, 2): 0}))

    def test_unconstrained(self):
        rep = solve_unconstrained(CostMatrix([[-1.0, 0.0], [2.0, -0.5]]), Evidence({(0, 0): 0}))
        assert rep.relation.bits.tolist() == [[0, 0], [0, 1]]


class TestPartitionExact:
    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
    def test_brute_force(self, n):
        g = np.random.default_rng(n)
        for _ in range(15):
            c = random_costs(g, n)
            rep = solve_partition_exact(c)
            assert rep.objective == pytest.approx(brute_partition(c), abs=1e-9)
            assert validate_relation(rep.relation)
            assert rep.certified_optimal

    def test_examples(self):
        c = np.full((3, 3), 1.0)
        np.fill_diagonal(c, 0)
        assert solve_partition_exact(CostMatrix(c)).relation.bits.tolist() == np.eye(3).tolist()
        assert solve_partition_exact(CostMatrix(-c)).relation.bits.sum() == 9

    def test_zero_costs_tie_is_single_block(self):
        assert solve_partition_exact(CostMatrix(np.zeros((4, 4)))).relation.bits.sum() == 16

    def test_evidence(self, rng):
        for _ in range(20):
            c = random_costs(rng, 5)
            ev = Evidence({(0, 1): 1, (1, 0): 1, (2, 3): 0, (3, 2): 0})
            rep = solve_partition_exact(c, ev)
            assert ev.agrees_with(rep.relation)
            assert rep.objective == pytest.approx(brute_partition(c, ev))

    def test_contradictions(self):
        c = CostMatrix(np.zeros((3, 3)))
        with pytest.raises(InfeasibleEvidenceError):
            solve_partition_exact(c, Evidence({(0, 1): 1, (1, 0): 0}))
        with pytest.raises(InfeasibleEvidenceError):
            solve_partition_exact(c, Evidence({(0, 1): 1, (1, 2): 1, (0, 2): 0}))
        with pytest.raises(InfeasibleEvidenceError):
            solve_partition_exact(c, Evidence({(1, 1): 0}))

    def test_guards(self):
        with pytest.raises(SizeGuardError):
            solve_partition_exact(CostMatrix(np.zeros((13, 13))))
        with pytest.raises(ShapeError):
            solve_partition_exact(CostMatrix(np.zeros((2, 3))))


class TestPartitionKL:
    def test_never_below_exact(self, rng):
        for n in range(3, 9):
            for _ in range(10):
                c = random_costs(rng, n)
                kl = solve_partition_kl(c)
                assert kl.objective >= solve_partition_exact(c).objective - 1e-9
                assert validate_relation(kl.relation) and not kl.certified_optimal

    def test_planted_blocks(self):
        labels = np.repeat([0, 1, 2], 5)
        c = np.where(labels[:, None] == labels[None, :], -1.0, 1.0)
        rep = solve_partition_kl(CostMatrix(c), init="random", seed=3)
        assert rep.relation == equivalence_from_labels(labels)

    def test_deterministic(self, rng):
        c = random_costs(rng, 20)
        a = solve_partition_kl(c, init="random", seed=7)
        b = solve_partition_kl(c, init="random", seed=7)
        assert a.relation == b.relation

    def test_init_not_worse(self, rng):
        for _ in range(10):
            c = random_costs(rng, 12)
            init = rng.integers(0, 4, 12)
            rep = solve_partition_kl(c, init=init)
            assert rep.objective <= relation_objective(equivalence_from_labels(init), c) + 1e-9

    def test_evidence_respected(self, rng):
        ev = Evidence({(0, 1): 1, (1, 0): 1, (2, 3): 0, (3, 2): 0, (4, 5): 1, (5, 4): 1})
        for _ in range(10):
            c = random_costs(rng, 10)
            for init in (None, "random"):
                rep = solve_partition_kl(c, ev, init=init, seed=1)
                assert ev.agrees_with(rep.relation)
        with pytest.raises(InfeasibleEvidenceError):
            solve_partition_kl(c, ev, init=np.arange(10))


class TestOrderExact:
    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
    def test_brute_force(self, n):
        g = np.random.default_rng(100 + n)
        for _ in range(15):
            c = random_costs(g, n)
            rep = solve_order_exact(c)
            assert rep.objective == pytest.approx(brute_order(c), abs=1e-9)
            assert validate_relation(rep.relation)

    def test_example(self):
        c = CostMatrix([[0, 5.0, 5.0], [-1.0, 0, 5.0], [-1.0, -1.0, 0]])
        rep = solve_order_exact(c)
        assert rep.info["sequence"] == [2, 1, 0]
        assert rep.objective == -3

    def test_ties_give_identity(self):
        assert solve_order_exact(CostMatrix(np.zeros((5, 5)))).info["sequence"] == [0, 1, 2, 3, 4]

    def test_evidence(self, rng):
        ev = Evidence({(3, 0): 1, (1, 2): 0})
        for _ in range(20):
            c = random_costs(rng, 5)
            rep = solve_order_exact(c, ev)
            assert ev.agrees_with(rep.relation)
            assert rep.objective == pytest.approx(brute_order(c, ev))

    def test_cycle_is_infeasible(self):
        ev = Evidence({(0, 1): 1, (1, 2): 1, (2, 0): 1})
        with pytest.raises(InfeasibleEvidenceError):
            solve_order_exact(CostMatrix(np.zeros((3, 3))), ev)
        with pytest.raises(InfeasibleEvidenceError):
            solve_order_local(CostMatrix(np.zeros((3, 3))), ev)

    def test_guard(self):
        with pytest.raises(SizeGuardError):
            solve_order_exact(CostMatrix(np.zeros((19, 19))))


class TestOrderLocal:
    def test_never_below_exact(self, rng):
        for n in range(3, 9):
            for _ in range(10):
                c = random_costs(rng, n)
                loc = solve_order_local(c)
                assert loc.objective >= solve_order_exact(c).objective - 1e-9
                assert validate_relation(loc.relation)

    def test_recovers_consistent_order(self, rng):
        perm = rng.permutation(15)
        rank = np.argsort(perm)
        c = np.where(rank[:, None] < rank[None, :], -1.0, 1.0)
        rep = solve_order_local(CostMatrix(c))
        assert rep.info["sequence"] == perm.tolist()

    def test_insertion_optimal(self, rng):
        # at convergence no single relocation lowers the cost
        c = random_costs(rng, 9)
        seq = solve_order_local(c).info["sequence"]
        base = relation_objective(order_from_sequence(seq), c)
        for e in range(9):
            rest = [v for v in seq if v != e]
            for j in range(9):
                cand = rest[:j] + [e] + rest[j:]
                assert relation_objective(order_from_sequence(cand), c) >= base - 1e-9

    def test_init_and_evidence(self, rng):
        c = random_costs(rng, 8)
        ev = Evidence({(7, 0): 1})
        rep = solve_order_local(c, ev, init=[7, 0, 1, 2, 3, 4, 5, 6])
        assert ev.agrees_with(rep.relation)
        with pytest.raises(InfeasibleEvidenceError):
            solve_order_local(c, ev, init=list(range(8)))


class TestDispatch:
    def test_auto_thresholds(self, rng):
        assert solve(random_costs(rng, 10), "equivalence").method is SolveMethod.PARTITION_EXACT
        assert solve(random_costs(rng, 11), "equivalence").method is SolveMethod.PARTITION_KL
        assert solve(random_costs(rng, 12), "linear_order").method is SolveMethod.ORDER_EXACT_DP
        assert solve(random_costs(rng, 13), "linear_order").method is SolveMethod.ORDER_LOCAL_SEARCH
        assert solve(random_costs(rng, 4), "equivalence", method="heuristic").method is SolveMethod.PARTITION_KL

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError):
            solve(random_costs(rng, 3), "equivalence", method="fast")

    def test_warm_start(self, rng):
        c = random_costs(rng, 14)
        start = solve(c, "linear_order", method="heuristic")
        again = solve(c, "linear_order", method="heuristic", init=start.relation)
        assert again.relation == start.relation


def planted_features(g, n, k=6):
    X = (g.random((n * n, k)) < 0.4).astype(float)
    return FeatureStore.grid((n, n), sp.csr_matrix(X))


class TestAlternating:
    @pytest.mark.parametrize("kind", ["logistic", "bernoulli"])
    def test_objective_non_increasing(self, kind):
        g = np.random.default_rng(4)
        fs = planted_features(g, 6)
        ev = Evidence({(0, 1): 1, (1, 0): 1, (0, 2): 0, (2, 0): 0})
        kw = {"tol": 1e-10} if kind == "logistic" else None
        model, rep = solve_alternating(fs, 1.0, kind, "equivalence", ev, learn_kwargs=kw)
        hist = rep.info["joint_objective"]
        assert all(b <= a + 1e-6 for a, b in zip(hist[1:], hist[2:]))
        assert ev.agrees_with(rep.relation) and validate_relation(rep.relation)
        assert not rep.certified_optimal

    def test_bernoulli_fixed_point_vs_brute_force(self):
        # the heuristic result can only be as good as the joint optimum over all 52 partitions
        g = np.random.default_rng(9)
        fs = planted_features(g, 5, k=4)
        ev = Evidence({(0, 1): 1, (1, 0): 1, (3, 4): 0, (4, 3): 0})
        model, rep = solve_alternating(fs, 2.0, "bernoulli", "equivalence", ev, solver="exact")
        found = bernoulli_objective(model, fs, rep.relation)
        best = np.inf
        n_partitions = 0
        for blocks in set_partitions(range(5)):
            n_partitions += 1
            r = equivalence_from_labels(labels_of(blocks, 5))
            if ev.agrees_with(r):
                best = min(best, bernoulli_objective(learn_bernoulli(fs, r, 2.0), fs, r))
        assert n_partitions == 52
        assert found >= best - 1e-9
        # a fixed point: re-learning on the returned relation reproduces the model
        assert np.allclose(learn_bernoulli(fs, rep.relation, 2.0).theta, model.theta)

    def test_fully_pinned(self):
        g = np.random.default_rng(2)
        fs = planted_features(g, 3)
        truth = equivalence_from_labels([0, 0, 1])
        ev = Evidence.from_relation(truth, [(a, b) for a in range(3) for b in range(3)])
        _, rep = solve_alternating(fs, 1.0, "bernoulli", "equivalence", ev)
        assert rep.relation == truth and rep.info["fixed_point"]

    def test_needs_evidence(self):
        fs = planted_features(np.random.default_rng(0), 3)
        with pytest.raises(ValueError):
            solve_alternating(fs, 1.0, "logistic", "equivalence", Evidence({}))
        with pytest.raises(ValueError):
            solve_alternating(fs, 1.0, "bernoulli", "equivalence", Evidence({(0, 1): 1}))
