import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from relkit.core import (
    ConstraintClass,
    CostMatrix,
    Evidence,
    FeatureStore,
    Relation,
    equivalence_from_labels,
    labels_from_equivalence,
    map_from_assignment,
    assignment_from_map,
    order_from_sequence,
    relation_objective,
    sequence_from_order,
    validate_relation,
)
from relkit.errors import ShapeError

C = ConstraintClass


def brute_valid(y: np.ndarray, cls: ConstraintClass) -> bool:
    """Direct evaluation of the integer constraints, one inequality at a time."""
    y = y.astype(int)
    n, m = y.shape
    if cls is C.UNCONSTRAINED:
        return True
    if cls is C.MAP:
        return all(sum(y[a, b] for b in range(m)) == 1 for a in range(n))
    if n != m:
        return False
    refl = all(y[a, a] == 1 for a in range(n))
    trans = all(
        y[a, b] + y[b, c] - 1 <= y[a, c] for a in range(n) for b in range(n) for c in range(n)
    )
    if cls is C.EQUIVALENCE:
        sym = all(y[a, b] == y[b, a] for a in range(n) for b in range(n))
        return refl and sym and trans
    anti = all(y[a, b] + y[b, a] <= 1 for a in range(n) for b in range(n) if a != b)
    total = all(y[a, b] + y[b, a] >= 1 for a in range(n) for b in range(n) if a != b)
    return refl and anti and total and trans


class TestValidateRelation:
    def test_identity_is_equivalence(self):
        assert validate_relation(Relation((3, 3), np.eye(3), C.EQUIVALENCE))

    def test_all_ones_is_not_an_order(self):
        res = validate_relation(Relation((3, 3), np.ones((3, 3)), C.LINEAR_ORDER))
        assert not res
        assert res.violation.constraint == "antisymmetry"
        assert res.violation.indices == (0, 1)

    def test_transitivity_witness(self):
        y = np.eye(3, dtype=int)
        y[0, 1] = y[1, 0] = y[1, 2] = y[2, 1] = 1
        res = validate_relation(Relation((3, 3), y, C.EQUIVALENCE))
        assert not res
        assert res.violation.constraint == "transitivity"
        assert res.violation.indices == (0, 1, 2)

    def test_map_violations(self):
        res = validate_relation(Relation((2, 3), [[0, 0, 0], [1, 0, 0]], C.MAP))
        assert res.violation.constraint == "existence" and res.violation.indices == (0,)
        res = validate_relation(Relation((2, 3), [[1, 0, 0], [0, 1, 1]], C.MAP))
        assert res.violation.constraint == "uniqueness" and res.violation.indices == (1, 1, 2)

    def test_non_square_order_raises(self):
        with pytest.raises(ShapeError):
            validate_relation(Relation((2, 3), np.zeros((2, 3)), C.LINEAR_ORDER))

    def test_missing_diagonal_reported_first(self):
        res = validate_relation(Relation((2, 2), [[1, 1], [1, 0]], C.EQUIVALENCE))
        assert res.violation.constraint == "reflexivity" and res.violation.indices == (1,)

    @pytest.mark.parametrize("n", [1, 2, 3])
    @pytest.mark.parametrize("cls", list(C))
    def test_exhaustive_square(self, n, cls):
        for bits in itertools.product((0, 1), repeat=n * n):
            y = np.array(bits, dtype=np.uint8).reshape(n, n)
            assert bool(validate_relation(Relation((n, n), y, cls))) == brute_valid(y, cls), y

    @pytest.mark.parametrize("cls", [C.EQUIVALENCE, C.LINEAR_ORDER])
    def test_exhaustive_four_elements(self, cls):
        # all 2^16 bit vectors; counts are the Bell number 15 and 4! = 24
        count = 0
        for code in range(1 << 16):
            y = ((code >> np.arange(16)) & 1).astype(np.uint8).reshape(4, 4)
            ok = bool(validate_relation(Relation((4, 4), y, cls)))
            if ok:
                assert brute_valid(y, cls)
                count += 1
        assert count == (15 if cls is C.EQUIVALENCE else 24)

    def test_exhaustive_maps(self):
        for bits in itertools.product((0, 1), repeat=6):
            y = np.array(bits).reshape(2, 3)
            assert bool(validate_relation(Relation((2, 3), y, C.MAP))) == brute_valid(y, C.MAP)


class TestRelation:
    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Relation((2, 2), np.zeros(5))

    def test_non_binary(self):
        with pytest.raises(ValueError):
            Relation((1, 2), [0, 2])

    def test_immutable(self):
        r = Relation((2, 2), np.eye(2))
        with pytest.raises(ValueError):
            r.bits[0, 0] = 0

    def test_equality_and_hash(self):
        a = Relation((2, 2), np.eye(2), "partition")
        b = Relation((2, 2), np.eye(2, dtype=int), C.EQUIVALENCE)
        assert a == b and hash(a) == hash(b)
        assert a != Relation((2, 2), np.eye(2), C.LINEAR_ORDER)


class TestObjective:
    def test_zero_costs(self):
        r = order_from_sequence([2, 0, 1])
        assert relation_objective(r, CostMatrix(np.zeros((3, 3)))) == 0

    def test_identity_map(self):
        r = Relation((2, 2), np.eye(2), C.MAP)
        assert relation_objective(r, CostMatrix([[1, 2], [3, 4]])) == 5

    def test_full_equivalence(self, rng):
        c = rng.normal(size=(3, 3))
        r = equivalence_from_labels([0, 0, 0])
        assert relation_objective(r, CostMatrix(c)) == pytest.approx(c.sum())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            relation_objective(Relation((2, 2), np.eye(2)), CostMatrix(np.zeros((3, 3))))

    @given(st.integers(0, 2**16 - 1), st.integers(0, 1000))
    def test_linear_in_costs(self, code, seed):
        y = ((code >> np.arange(16)) & 1).reshape(4, 4)
        r = Relation((4, 4), y)
        g = np.random.default_rng(seed)
        c1, c2 = CostMatrix(g.normal(size=(4, 4))), CostMatrix(g.normal(size=(4, 4)))
        lhs = relation_objective(r, c1 + c2)
        assert lhs == pytest.approx(relation_objective(r, c1) + relation_objective(r, c2), abs=1e-12)

    def test_costs_must_be_finite(self):
        with pytest.raises(ValueError):
            CostMatrix([[0.0, np.inf]])


class TestFeatureStore:
    def test_from_index_lists(self):
        fs = FeatureStore.from_index_lists((2, 2), {(0, 1): [0, 3], (1, 0): []}, 4)
        assert fs.num_pairs == 2
        assert fs.active(0, 1) == [0, 3]
        assert fs.active(1, 0) == []
        assert fs.is_binary()
        assert not fs.covers_grid()

    def test_rejects_bad_index_lists(self):
        with pytest.raises(ValueError):
            FeatureStore.from_index_lists((1, 1), {(0, 0): [2, 1]}, 4)
        with pytest.raises(ValueError):
            FeatureStore.from_index_lists((1, 1), {(0, 0): [1, 1]}, 4)
        with pytest.raises(ValueError):
            FeatureStore.from_index_lists((1, 1), {(0, 0): [4]}, 4)

    def test_pair_out_of_range(self):
        with pytest.raises(ShapeError):
            FeatureStore((1, 1), [[0, 1]], sp.csr_matrix((1, 2)), 2)

    def test_grid(self):
        fs = FeatureStore.grid((2, 3), sp.identity(6, format="csr"))
        assert fs.covers_grid()
        assert fs.grid_order().tolist() == list(range(6))
        assert fs.active(1, 2) == [5]


class TestEvidence:
    def test_values_checked(self):
        with pytest.raises(ValueError):
            Evidence({(0, 1): 2})

    def test_read_only_and_agreement(self):
        ev = Evidence({(0, 1): 1})
        with pytest.raises(TypeError):
            ev.pinned[(1, 0)] = 1
        assert ev.agrees_with(equivalence_from_labels([0, 0]))
        assert not ev.agrees_with(equivalence_from_labels([0, 1]))

    def test_bounds(self):
        with pytest.raises(ShapeError):
            Evidence({(3, 0): 1}).check_bounds((2, 2))


class TestConversions:
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=8))
    def test_labels_round_trip(self, labels):
        r = equivalence_from_labels(labels)
        assert validate_relation(r)
        back = labels_from_equivalence(r)
        assert equivalence_from_labels(back) == r
        # restricted growth string: first element opens block 0, blocks open in order
        assert back[0] == 0 and all(back[i] <= back[:i].max() + 1 for i in range(1, len(back)))

    @given(st.permutations(list(range(6))))
    def test_sequence_round_trip(self, seq):
        r = order_from_sequence(seq)
        assert validate_relation(r)
        assert sequence_from_order(r).tolist() == list(seq)

    def test_map_round_trip(self):
        r = map_from_assignment([2, 0, 1, 2], 3)
        assert validate_relation(r)
        assert assignment_from_map(r).tolist() == [2, 0, 1, 2]

    def test_order_convention(self):
        r = order_from_sequence([1, 0])
        # element 1 comes first, so y[1, 0] = 1 and y[0, 1] = 0
        assert r.bits.tolist() == [[1, 0], [1, 1]]

    def test_constraint_aliases(self):
        assert C.parse("order") is C.LINEAR_ORDER
        assert C.parse("cluster") is C.EQUIVALENCE
        with pytest.raises(ValueError):
            C.parse("lattice")
