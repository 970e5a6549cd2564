import math

import numpy as np
import pytest

from elsm.generator import (
    evolve_embeddings,
    generate_network,
    sample_adjacency,
    sample_initial_centers,
    sample_initial_embeddings,
    sample_memberships,
    sample_split_indicators,
    substream,
)
from elsm.model_core import HyperParams, edge_kernel_f, neighbor_means


def rng(seed=0):
    return np.random.default_rng(seed)


class TestCenters:
    def test_tiny_spread_collapses_to_prior_mean(self):
        p = HyperParams(n=4, T=1, K=3, m_prior=[1.0, -2.0], s=1e-12)
        centers = sample_initial_centers(p, rng())
        np.testing.assert_allclose(centers, [[1.0, -2.0]] * 3, atol=1e-10)

    def test_explicit_override(self):
        p = HyperParams(n=4, T=1, K=2)
        given = [[0, 0], [5, 5]]
        np.testing.assert_array_equal(sample_initial_centers(p, rng(), given), given)
        with pytest.raises(ValueError):
            sample_initial_centers(p, rng(), [[0, 0]])

    def test_monte_carlo_mean(self):
        N = 100_000
        p = HyperParams(n=1, T=1, K=N, m_prior=[0.5, -1.0], s=2.0)
        centers = sample_initial_centers(p, rng(1))
        tol = 3 * p.s / math.sqrt(N)
        assert np.all(np.abs(centers.mean(axis=0) - p.m_prior) < tol)


class TestMemberships:
    def test_degenerate_pi(self):
        c = sample_memberships([1, 0, 0, 0], 50, rng())
        assert np.all(c == 1)

    def test_uniform_frequencies(self):
        c = sample_memberships(np.full(5, 0.2), 100_000, rng(2))
        freq = np.bincount(c, minlength=6)[1:] / len(c)
        assert c.min() >= 1 and c.max() <= 5
        np.testing.assert_allclose(freq, 0.2, atol=0.01)

    def test_empty(self):
        assert sample_memberships([0.5, 0.5], 0, rng()).shape == (0,)


class TestInitialEmbeddings:
    def test_tiny_spread_hits_centers(self):
        centers = np.array([[0.0, 0.0], [3.0, 4.0]])
        c = np.array([2, 1, 2])
        Z = sample_initial_embeddings(centers, c, 1e-14, rng())
        np.testing.assert_allclose(Z, centers[c - 1], atol=1e-12)

    def test_covariance(self):
        s1 = 0.3
        c = np.ones(50_000, dtype=int)
        Z = sample_initial_embeddings(np.array([[1.0, 2.0]]), c, s1, rng(3))
        np.testing.assert_allclose(np.cov(Z.T), s1 ** 2 * np.eye(2), atol=3e-3)

    def test_single_node(self):
        Z = sample_initial_embeddings(np.zeros((1, 2)), np.array([1]), 1.0, rng())
        assert np.all(np.isfinite(Z))

    def test_bad_membership(self):
        with pytest.raises(ValueError):
            sample_initial_embeddings(np.zeros((2, 2)), np.array([3]), 1.0, rng())


class TestAdjacency:
    def test_coincident_nodes_always_linked(self):
        Z = np.zeros((2, 2))
        for seed in range(20):
            assert sample_adjacency(Z, 0.2, rng(seed))[0, 1] == 1

    def test_edge_frequency_matches_kernel(self):
        s2 = 0.2
        Z = np.array([[0.0, 0.0], [s2, 0.0]])
        r = rng(4)
        hits = sum(sample_adjacency(Z, s2, r)[1, 0] for _ in range(100_000))
        assert abs(hits / 100_000 - (1 - math.tanh(1))) < 0.01

    def test_symmetric_zero_diagonal(self):
        Z = rng(5).normal(size=(12, 2)) * 0.2
        A = sample_adjacency(Z, 0.2, rng(6))
        np.testing.assert_array_equal(A, A.T)
        assert np.all(np.diag(A) == 0)
        W = sample_adjacency(Z, 0.2, rng(6), weighted=True, poisson_w=1.0, poisson_b=1.0)
        np.testing.assert_array_equal(W, W.T)
        assert np.all(W == np.round(W)) and np.all(np.diag(W) == 0)

    def test_sparsity_increases_with_s2(self):
        Z = rng(7).normal(size=(40, 2))
        counts = []
        for s2 in (0.1, 0.3, 1.0):
            r = rng(8)
            counts.append(np.mean([sample_adjacency(Z, s2, r).sum() for _ in range(200)]))
        assert counts[0] < counts[1] < counts[2]


class TestSplitIndicators:
    def test_at_alpha(self):
        Z = np.array([[1.0, 1.0]] * 5)
        assert np.all(sample_split_indicators(Z, np.array([1.0, 1.0]), 1.0, rng()) == 1)

    def test_far_from_alpha(self):
        Z = np.full((100, 2), 50.0)
        assert np.all(sample_split_indicators(Z, np.zeros(2), 1.0, rng()) == 0)

    def test_rate(self):
        s3 = 1.0
        Z = np.tile([[s3, 0.0]], (100_000, 1))
        h = sample_split_indicators(Z, np.zeros(2), s3, rng(9))
        assert abs(h.mean() - (1 - math.tanh(1))) < 0.01


class TestEvolution:
    def test_split_goes_to_alpha(self):
        Z = rng().normal(size=(3, 2))
        alpha = np.array([0.4, -0.9])
        out = evolve_embeddings(Z, np.zeros((3, 3)), np.ones(3), alpha, 1e-14, 0.5, rng())
        np.testing.assert_allclose(out, np.tile(alpha, (3, 1)), atol=1e-12)

    def test_isolated_stays(self):
        Z = rng().normal(size=(3, 2))
        out = evolve_embeddings(Z, np.zeros((3, 3)), np.zeros(3), np.zeros(2), 1e-14, 0.5, rng())
        np.testing.assert_allclose(out, Z, atol=1e-12)

    def test_monte_carlo_mean(self):
        r = rng(10)
        Z = r.normal(size=(4, 2)) * 0.5
        A = np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]], dtype=float)
        h = np.array([0, 1, 0, 0])
        alpha = np.array([1.0, 1.0])
        s1, s4, N = 0.05, 0.5, 100_000
        mean = h[:, None] * alpha + (1 - h[:, None]) * neighbor_means(Z, A, s4)
        draws = np.empty((N, 4, 2))
        for k in range(N):
            draws[k] = evolve_embeddings(Z, A, h, alpha, s1, s4, r)
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * s1 / math.sqrt(N))


class TestGenerateNetwork:
    def test_benchmark_configuration(self):
        out = generate_network(HyperParams.benchmark_synthetic(), 0)
        assert out.network.snapshots.shape == (10, 100, 100)
        assert out.trajectory.Z.shape == (10, 100, 2)
        assert out.trajectory.h.shape == (9, 100)
        assert out.trajectory.alpha.shape == (9, 2)
        assert set(np.unique(out.trajectory.c)) <= {1, 2, 3, 4, 5}
        A = out.network.snapshots
        np.testing.assert_array_equal(A, np.swapaxes(A, 1, 2))

    def test_single_snapshot(self):
        out = generate_network(HyperParams(n=6, T=1, K=2), 1)
        assert out.network.T == 1
        assert out.trajectory.h.shape == (0, 6)
        assert out.trajectory.alpha.shape == (0, 2)

    def test_single_node(self):
        out = generate_network(HyperParams(n=1, T=3, K=1), 1)
        np.testing.assert_array_equal(out.network.snapshots, np.zeros((3, 1, 1)))

    def test_deterministic(self):
        p = HyperParams(n=20, T=4, K=3)
        a, b = generate_network(p, 42), generate_network(p, 42)
        np.testing.assert_array_equal(a.network.snapshots, b.network.snapshots)
        np.testing.assert_array_equal(a.trajectory.Z, b.trajectory.Z)
        c = generate_network(p, 43)
        assert not np.array_equal(a.trajectory.Z, c.trajectory.Z)

    def test_weighted(self):
        out = generate_network(HyperParams(n=10, T=3, K=2, s=0.3), 0, weighted=True,
                               poisson_b=1.0)
        assert out.network.weighted
        assert out.network.snapshots.max() >= 1

    def test_substreams_independent_of_call_order(self):
        a = substream(5, 3, 1).random(4)
        substream(5, 2).random(100)
        np.testing.assert_array_equal(substream(5, 3, 1).random(4), a)

    def test_frozen_latent_edge_law(self):
        out = generate_network(HyperParams(n=8, T=1, K=2, s2=0.5, s=0.4), 3)
        Z = out.trajectory.Z[0]
        p = edge_kernel_f(Z[:, None, :] - Z[None, :, :], 0.5)
        N = 20_000
        r = rng(11)
        freq = sum(sample_adjacency(Z, 0.5, r) for _ in range(N)) / N
        rows, cols = np.tril_indices(8, -1)
        sigma = np.sqrt(p[rows, cols] * (1 - p[rows, cols]) / N)
        assert np.all(np.abs(freq[rows, cols] - p[rows, cols]) <= 3 * sigma + 1e-12)
