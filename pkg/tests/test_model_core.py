import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from elsm.model_core import (
    DynamicNetwork,
    HyperParams,
    LatentTrajectory,
    edge_kernel_f,
    influence_kernel_l,
    neighbor_mean,
    neighbor_means,
    split_kernel_g,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestHyperParams:
    def test_benchmark_synthetic_values(self):
        p = HyperParams.benchmark_synthetic()
        assert (p.n, p.T, p.K, p.d) == (100, 10, 5, 2)
        assert (p.s, p.s1, p.s2, p.s3, p.s4) == (1.0, 0.05, 0.2, 1.0, 0.5)
        np.testing.assert_allclose(p.pi, np.full(5, 0.2))
        np.testing.assert_array_equal(p.m_prior, [0.0, 0.0])

    @pytest.mark.parametrize("field", ["s", "s1", "s2", "s3", "s4"])
    def test_rejects_zero_scale(self, field):
        with pytest.raises(ValueError, match=field):
            HyperParams(n=3, T=2, K=2, **{field: 0.0})

    def test_rejects_bad_pi(self):
        with pytest.raises(ValueError):
            HyperParams(n=3, T=2, K=2, pi=[0.7, 0.4])
        with pytest.raises(ValueError):
            HyperParams(n=3, T=2, K=2, pi=[1.2, -0.2])

    def test_pi_tolerance(self):
        HyperParams(n=3, T=2, K=2, pi=[0.5, 0.5 + 5e-10])

    def test_dict_round_trip(self):
        p = HyperParams.benchmark_synthetic()
        q = HyperParams.from_dict(p.to_dict())
        assert q.to_dict() == p.to_dict()

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            HyperParams.from_dict({"n": 2, "T": 1, "K": 1, "bogus": 3})


class TestDynamicNetwork:
    def test_valid(self):
        A = np.zeros((2, 3, 3))
        A[0, 0, 1] = A[0, 1, 0] = 1
        net = DynamicNetwork(A)
        assert (net.T, net.n) == (2, 3)

    def test_asymmetric_rejected(self):
        A = np.zeros((1, 3, 3))
        A[0, 0, 1] = 1
        with pytest.raises(ValueError, match="symmetric"):
            DynamicNetwork(A)

    def test_self_loop_rejected(self):
        A = np.zeros((1, 2, 2))
        A[0, 0, 0] = 1
        with pytest.raises(ValueError, match="diagonal"):
            DynamicNetwork(A)

    def test_binary_domain(self):
        A = np.zeros((1, 2, 2))
        A[0, 0, 1] = A[0, 1, 0] = 2
        with pytest.raises(ValueError):
            DynamicNetwork(A)
        assert DynamicNetwork(A, weighted=True).snapshots.max() == 2

    def test_weighted_needs_integers(self):
        A = np.zeros((1, 2, 2))
        A[0, 0, 1] = A[0, 1, 0] = 1.5
        with pytest.raises(ValueError, match="integers"):
            DynamicNetwork(A, weighted=True)

    def test_binarized_and_prefix(self):
        A = np.zeros((3, 2, 2))
        A[:, 0, 1] = A[:, 1, 0] = [0, 3, 1]
        net = DynamicNetwork(A, weighted=True)
        np.testing.assert_array_equal(net.binarized().snapshots[:, 0, 1], [0, 1, 1])
        assert net.prefix(2).T == 2


class TestLatentTrajectory:
    def test_shapes_checked(self):
        Z = np.zeros((3, 4, 2))
        LatentTrajectory(Z, c=[1, 2, 1, 2], h=np.zeros((2, 4)), mu=np.zeros((2, 2)),
                         alpha=np.zeros((2, 2)))
        with pytest.raises(ValueError):
            LatentTrajectory(Z, h=np.zeros((3, 4)))
        with pytest.raises(ValueError):
            LatentTrajectory(Z, c=[0, 1, 1, 1])
        with pytest.raises(ValueError):
            LatentTrajectory(Z, h=np.full((2, 4), 2))


class TestKernels:
    def test_edge_kernel_values(self):
        assert edge_kernel_f(np.zeros(2), 0.3) == 1.0
        s2 = 0.2
        diff = np.array([s2, 0.0])
        assert edge_kernel_f(diff, s2) == pytest.approx(1 - math.tanh(1), abs=1e-15)
        assert edge_kernel_f(diff, s2) == pytest.approx(0.238406, abs=1e-6)
        assert edge_kernel_f(np.array([100 * s2]), s2) < 1e-12

    def test_split_kernel_values(self):
        assert split_kernel_g(np.zeros(3), 1.0) == 1.0
        s3 = 1.7
        assert split_kernel_g(np.array([s3]), s3) == pytest.approx(0.238406, abs=1e-6)
        diff = np.array([s3, s3])
        assert split_kernel_g(diff, s3) == pytest.approx(1 - math.tanh(2), abs=1e-15)
        assert split_kernel_g(diff, s3) == pytest.approx(0.035972, abs=1e-6)

    def test_influence_kernel_values(self):
        assert influence_kernel_l(np.zeros(2), 0.5) == 1.0
        assert influence_kernel_l(np.array([0.5]), 0.5) == pytest.approx(math.exp(-1))
        assert influence_kernel_l(np.array([1e3]), 0.5) == 0.0

    @pytest.mark.parametrize("kernel", [edge_kernel_f, split_kernel_g, influence_kernel_l])
    def test_invalid_inputs(self, kernel):
        with pytest.raises(ValueError):
            kernel(np.array([np.nan]), 1.0)
        with pytest.raises(ValueError):
            kernel(np.array([np.inf]), 1.0)
        with pytest.raises(ValueError):
            kernel(np.zeros(2), 0.0)
        with pytest.raises(ValueError):
            kernel(np.zeros(2), -1.0)

    @given(st.floats(0, 3), st.floats(1e-3, 2), st.floats(0.1, 3))
    def test_monotone_decreasing(self, r, dr, scale):
        for kernel in (edge_kernel_f, split_kernel_g, influence_kernel_l):
            near = kernel(np.array([r]), scale)
            far = kernel(np.array([r + dr]), scale)
            assert far <= near
            if near > 1e-12 and far < 1.0:
                assert far < near

    @given(arrays(np.float64, 3, elements=finite), st.floats(0.05, 5))
    def test_range(self, diff, scale):
        for kernel in (edge_kernel_f, split_kernel_g, influence_kernel_l):
            v = kernel(diff, scale)
            assert 0.0 <= v <= 1.0


def brute_neighbor_mean(Z, A, i, s4):
    num = list(Z[i])
    den = 1.0
    for j in range(len(Z)):
        if j == i or A[i][j] == 0:
            continue
        w = A[i][j] * math.exp(-sum((a - b) ** 2 for a, b in zip(Z[i], Z[j])) / s4 ** 2)
        num = [x + w * y for x, y in zip(num, Z[j])]
        den += w
    return np.array([x / den for x in num])


class TestNeighborMean:
    def test_isolated_node(self):
        Z = np.array([[0.3, -1.0], [2.0, 2.0]])
        np.testing.assert_array_equal(neighbor_mean(Z, np.zeros((2, 2)), 0, 0.5), Z[0])

    def test_coincident_neighbor(self):
        Z = np.array([[1.5, 2.5], [1.5, 2.5]])
        A = np.array([[0, 1], [1, 0]])
        np.testing.assert_allclose(neighbor_mean(Z, A, 1, 0.7), [1.5, 2.5])

    def test_path_graph(self):
        Z = np.array([[0.0], [1.0], [2.0]])
        A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        e = math.exp(-1)
        expected = (0 * e + 1 + 2 * e) / (1 + 2 * e)
        got = neighbor_mean(Z, A, 1, 1.0)
        assert got[0] == pytest.approx(expected, abs=1e-15)
        assert got[0] == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(neighbor_mean(Z, A, 0, 1.0),
                                   brute_neighbor_mean(Z.tolist(), A.tolist(), 0, 1.0))

    def test_random_matches_brute_force(self):
        rng = np.random.default_rng(3)
        Z = rng.normal(size=(6, 3))
        A = (rng.random((6, 6)) < 0.5).astype(float)
        A = np.triu(A, 1)
        A = A + A.T
        all_means = neighbor_means(Z, A, 0.8)
        for i in range(6):
            ref = brute_neighbor_mean(Z.tolist(), A.tolist(), i, 0.8)
            np.testing.assert_allclose(neighbor_mean(Z, A, i, 0.8), ref, rtol=1e-13)
            np.testing.assert_allclose(all_means[i], ref, rtol=1e-13)

    def test_weighted_entries_used_literally(self):
        Z = np.array([[0.0], [1.0]])
        A = np.array([[0, 3], [3, 0]])
        w = 3 * math.exp(-1)
        assert neighbor_mean(Z, A, 0, 1.0)[0] == pytest.approx(w / (1 + w))

    def test_errors(self):
        Z = np.zeros((3, 2))
        with pytest.raises(ValueError):
            neighbor_mean(Z, np.zeros((2, 2)), 0, 1.0)
        with pytest.raises(IndexError):
            neighbor_mean(Z, np.zeros((3, 3)), 3, 1.0)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_convex_hull(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        Z = rng.normal(size=(n, 2)) * 2
        A = np.triu((rng.random((n, n)) < 0.5).astype(float), 1)
        A = A + A.T
        i = int(rng.integers(n))
        mu = neighbor_mean(Z, A, i, 0.9)
        members = [i] + [j for j in range(n) if A[i, j] > 0]
        lo, hi = Z[members].min(axis=0), Z[members].max(axis=0)
        assert np.all(mu >= lo - 1e-12) and np.all(mu <= hi + 1e-12)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_equivariant(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        Z = rng.normal(size=(n, 2))
        A = np.triu((rng.random((n, n)) < 0.5).astype(float), 1)
        A = A + A.T
        perm = rng.permutation(n)
        out = neighbor_means(Z, A, 0.6)
        out_p = neighbor_means(Z[perm], A[np.ix_(perm, perm)], 0.6)
        np.testing.assert_allclose(out_p, out[perm], rtol=1e-12)
