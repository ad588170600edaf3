import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from relkit.core import FeatureStore
from relkit.errors import SizeGuardError
from relkit.lifting import (
    ExactLifter,
    LiftMode,
    LiftSpec,
    TensorSketch,
    circular_convolve,
    lift_exact,
    lift_features,
    lift_sketch,
    pair_feature_matrix,
    pair_features,
)


def all_binary(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)


class TestLiftExact:
    @pytest.mark.parametrize("v", [(0, 0), (0, 1), (1, 0), (1, 1)])
    def test_two_inputs(self, v):
        v1, v2 = v
        assert lift_exact(v).tolist() == [1, v1, v2, v1 * v2]

    def test_all_zero_and_all_one(self):
        assert lift_exact([0, 0, 0]).tolist() == [1] + [0] * 7
        assert lift_exact([1, 1, 1]).tolist() == [1] * 8

    @given(st.lists(st.integers(0, 1), min_size=0, max_size=10))
    def test_popcount(self, v):
        assert int(lift_exact(v).sum()) == 2 ** sum(v)

    def test_guard(self):
        with pytest.raises(SizeGuardError):
            lift_exact(np.zeros(21))

    @given(st.integers(1, 7), st.integers(0, 10_000))
    def test_multilinear_form(self, n, seed):
        g = np.random.default_rng(seed)
        v = g.integers(0, 2, n)
        theta = g.normal(size=2**n)
        # sum over subsets S of theta_S * prod_{j in S} v_j, S encoded as a bitmask
        direct = sum(theta[s] * all(v[j] for j in range(n) if s >> j & 1) for s in range(2**n))
        assert theta @ lift_exact(v) == pytest.approx(direct, abs=1e-12)


class TestExactLifter:
    def test_full_matches_lift_exact(self):
        X = all_binary(4)
        L = ExactLifter(4, None).transform(X).toarray()
        assert np.array_equal(L, np.array([lift_exact(x) for x in X]))

    @pytest.mark.parametrize("n,d", [(5, 1), (5, 2), (6, 3), (4, 4)])
    def test_truncated_is_a_bijection_onto_small_monomials(self, n, d):
        lifter = ExactLifter(n, d)
        assert lifter.num_outputs == sum(math.comb(n, k) for k in range(d + 1))
        row = lifter.transform(np.ones((1, n))).toarray()[0]
        assert np.all(row == 1)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_truncated_kernel(self, d):
        # <L(x), L(x')> counts common monomials: sum_{k<=d} C(<x,x'>, k)
        X = all_binary(5)
        L = ExactLifter(5, d).transform(X).toarray()
        inner = X.astype(int) @ X.T.astype(int)
        expected = sum(np.vectorize(lambda t, k=k: math.comb(t, k))(inner) for k in range(d + 1))
        assert np.array_equal(L @ L.T, expected)

    def test_degree_one_is_constant_plus_raw(self):
        X = sp.csr_matrix(np.array([[0, 1, 1], [0, 0, 0]]))
        L = ExactLifter(3, 1).transform(X).toarray()
        assert L.tolist() == [[1, 0, 1, 1], [1, 0, 0, 0]]

    def test_output_guard(self):
        with pytest.raises(SizeGuardError):
            ExactLifter(5000, 2)


class TestConvolution:
    @given(st.integers(1, 40), st.integers(0, 10_000))
    def test_direct_and_fft_agree_with_definition(self, m, seed):
        g = np.random.default_rng(seed)
        a, b = g.integers(-50, 50, m), g.integers(-50, 50, m)
        naive = np.array([sum(a[i] * b[(k - i) % m] for i in range(m)) for k in range(m)])
        assert np.array_equal(circular_convolve(a, b, "direct"), naive)
        assert np.array_equal(circular_convolve(a, b, "fft"), naive)

    def test_wide_paths_agree(self):
        g = np.random.default_rng(3)
        a, b = g.integers(-3, 4, (2, 2048)), g.integers(-3, 4, (2, 2048))
        assert np.array_equal(circular_convolve(a, b, "direct"), circular_convolve(a, b, "fft"))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            circular_convolve([1], [1], "magic")


class TestSketch:
    def spec(self, seed=0, d=2, m=64):
        return LiftSpec(LiftMode.SKETCH, degree=d, width=m, seed=seed)

    def test_reproducible(self):
        v = np.random.default_rng(1).integers(0, 2, 30)
        a, b = lift_sketch(v, self.spec(7)), lift_sketch(v, self.spec(7))
        assert a.dtype.kind == "i" and np.array_equal(a, b)
        assert not np.array_equal(a, lift_sketch(v, self.spec(8)))

    @pytest.mark.parametrize("seed", range(20))
    def test_zero_vector_kernel_is_one(self, seed):
        # only the constant coordinate is active, so the sketch is a single signed unit
        z = lift_sketch(np.zeros(10), self.spec(seed, d=2, m=16))
        assert int(z @ z) == 1

    def test_fft_path_matches_direct(self):
        X = np.random.default_rng(2).integers(0, 2, (5, 40))
        sk = TensorSketch(40, 3, 2048, seed=4)
        assert np.array_equal(sk.transform(X, "direct"), sk.transform(X, "fft"))

    def test_sparse_and_dense_inputs_agree(self):
        X = np.random.default_rng(2).integers(0, 2, (5, 40))
        sk = TensorSketch(40, 2, 32, seed=4)
        assert np.array_equal(sk.transform(X), sk.transform(sp.csr_matrix(X)))

    def test_unbiased_small(self):
        # <x, x'> = 3 so the degree-2 kernel is 16
        x = np.zeros(12)
        y = np.zeros(12)
        x[:5] = 1
        y[2:8] = 1
        vals = [lift_sketch(x, self.spec(s, 2, 32)) @ lift_sketch(y, self.spec(s, 2, 32)) for s in range(400)]
        se = np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(np.mean(vals) - 16) < 4 * se

    def test_lift_features_dense(self):
        fs = FeatureStore.grid((2, 1), sp.csr_matrix(np.array([[1, 0, 1], [0, 0, 0]])))
        out = lift_features(fs, self.spec(3, 2, 8))
        assert isinstance(out.matrix, np.ndarray) and out.matrix.shape == (2, 8)
        assert out.num_features == 8 and out.pairs.tolist() == fs.pairs.tolist()

    def test_wrong_mode(self):
        with pytest.raises(ValueError):
            lift_sketch([1, 0], LiftSpec())


class TestLiftSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            LiftSpec(LiftMode.SKETCH, degree=2, width=None, seed=0)
        with pytest.raises(ValueError):
            LiftSpec(LiftMode.SKETCH, degree=2, width=8, seed=None)
        with pytest.raises(ValueError):
            LiftSpec(degree=0)

    @pytest.mark.parametrize("spec", [LiftSpec(), LiftSpec(degree=None), LiftSpec("sketch", 3, 128, 9)])
    def test_dict_round_trip(self, spec):
        assert LiftSpec.from_dict(spec.to_dict()) == spec

    def test_output_dim(self):
        assert LiftSpec(degree=None).output_dim(3) == 8
        assert LiftSpec(degree=2).output_dim(4) == 11
        assert LiftSpec("sketch", 2, 64, 0).output_dim(1000) == 64


class TestPairFeatures:
    @pytest.mark.parametrize("pair,expected", [((1, 0), [0, 1]), ((1, 1), [1, 0]), ((0, 0), [0, 0]), ((0, 1), [0, 1])])
    def test_single_coordinate(self, pair, expected):
        assert pair_features([pair[0]], [pair[1]]).tolist() == expected

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pair_features([1, 0], [1])

    def test_symmetric_exhaustive(self):
        W = all_binary(8)
        n = len(W)
        a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        pairs = np.stack([a.ravel(), b.ravel()], axis=1)
        F = pair_feature_matrix(W, pairs).toarray().reshape(n, n, 16)
        assert np.array_equal(F, F.transpose(1, 0, 2))
        # spot-check the sparse builder against the vector version
        for i, j in [(0, 255), (3, 200), (77, 77), (128, 1)]:
            assert np.array_equal(F[i, j], pair_features(W[i], W[j]))
