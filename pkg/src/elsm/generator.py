"""Sampling synthetic dynamic networks from the evolving latent space model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import (
    DynamicNetwork,
    HyperParams,
    LatentTrajectory,
    edge_kernel_f,
    neighbor_means,
    split_kernel_g,
)

# Substream identifiers; each (stream, timestep) pair gets its own Philox key.
_STREAMS = {"centers": 0, "memberships": 1, "embeddings": 2, "adjacency": 3,
            "alpha": 4, "split": 5, "evolve": 6}


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the entity identified by ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def sample_initial_centers(params: HyperParams, rng: np.random.Generator,
                           centers=None) -> np.ndarray:
    """``K`` community centers drawn from ``N(m_prior, s^2 I)``.

    Explicit ``centers`` are validated and returned unchanged.
    """
    if centers is not None:
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (params.K, params.d):
            raise ValueError(f"centers must have shape {(params.K, params.d)}")
        return centers
    return params.m_prior + params.s * rng.standard_normal((params.K, params.d))


def sample_memberships(pi, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. categorical labels in ``1..K``."""
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("pi must be a probability vector")
    return rng.choice(len(pi), size=n, p=pi).astype(np.int64) + 1


def sample_initial_embeddings(centers, c, s1: float, rng: np.random.Generator) -> np.ndarray:
    centers = np.asarray(centers, dtype=np.float64)
    c = np.asarray(c, dtype=np.int64)
    if c.size and (c.min() < 1 or c.max() > len(centers)):
        raise ValueError("memberships must index valid centers (1-based)")
    return centers[c - 1] + s1 * rng.standard_normal((len(c), centers.shape[1]))


def sample_adjacency(Z, s2: float, rng: np.random.Generator, weighted: bool = False,
                     poisson_w: float = 1.0, poisson_b: float = 0.0) -> np.ndarray:
    """Symmetric adjacency with zero diagonal.

    Binary entries are Bernoulli with the edge kernel; weighted entries are
    Poisson with mean ``exp(-poisson_w^2 |z_i - z_j|^2 + poisson_b)``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    rows, cols = np.tril_indices(n, k=-1)
    diff = Z[rows] - Z[cols]
    if weighted:
        rate = np.exp(-poisson_w ** 2 * np.sum(diff * diff, axis=1) + poisson_b)
        vals = rng.poisson(rate).astype(np.float64)
    else:
        p = edge_kernel_f(diff, s2)
        vals = (rng.random(len(rows)) < p).astype(np.float64)
    A = np.zeros((n, n))
    A[rows, cols] = vals
    A[cols, rows] = vals
    return A


def sample_split_indicators(Z_prev, alpha, s3: float, rng: np.random.Generator) -> np.ndarray:
    Z_prev = np.asarray(Z_prev, dtype=np.float64)
    p = split_kernel_g(Z_prev - np.asarray(alpha, dtype=np.float64), s3)
    return (rng.random(Z_prev.shape[0]) < p).astype(np.int64)


def evolve_embeddings(Z_prev, A_prev, h, alpha, s1: float, s4: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw ``z_i ~ N(h_i alpha + (1 - h_i) mu_i, s1^2 I)`` for every node."""
    Z_prev = np.asarray(Z_prev, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)[:, None]
    if h.shape[0] != Z_prev.shape[0]:
        raise ValueError("h must have one entry per node")
    mean = h * np.asarray(alpha, dtype=np.float64) + (1.0 - h) * neighbor_means(Z_prev, A_prev, s4)
    return mean + s1 * rng.standard_normal(Z_prev.shape)


@dataclass
class GeneratorOutput:
    network: DynamicNetwork
    trajectory: LatentTrajectory
    seed: int


def generate_network(params: HyperParams, seed: int, weighted: bool = False,
                     poisson_w: float = 1.0, poisson_b: float = 0.0,
                     centers=None) -> GeneratorOutput:
    """Run the full generative process for ``params.T`` snapshots."""
    p = params
    mu = sample_initial_centers(p, substream(seed, _STREAMS["centers"]), centers)
    c = sample_memberships(p.pi, p.n, substream(seed, _STREAMS["memberships"]))
    Z = np.empty((p.T, p.n, p.d))
    A = np.empty((p.T, p.n, p.n))
    h = np.zeros((p.T - 1, p.n), dtype=np.int64)
    alpha = np.empty((p.T - 1, p.d))

    def emit(t):
        return sample_adjacency(Z[t], p.s2, substream(seed, _STREAMS["adjacency"], t),
                                weighted=weighted, poisson_w=poisson_w, poisson_b=poisson_b)

    Z[0] = sample_initial_embeddings(mu, c, p.s1, substream(seed, _STREAMS["embeddings"]))
    A[0] = emit(0)
    for t in range(1, p.T):
        alpha[t - 1] = p.m_prior + p.s * substream(seed, _STREAMS["alpha"], t).standard_normal(p.d)
        h[t - 1] = sample_split_indicators(Z[t - 1], alpha[t - 1], p.s3,
                                           substream(seed, _STREAMS["split"], t))
        Z[t] = evolve_embeddings(Z[t - 1], A[t - 1], h[t - 1], alpha[t - 1], p.s1, p.s4,
                                 substream(seed, _STREAMS["evolve"], t))
        A[t] = emit(t)

    trajectory = LatentTrajectory(Z=Z, c=c, h=h, mu=mu, alpha=alpha)
    return GeneratorOutput(DynamicNetwork(A, weighted=weighted), trajectory, int(seed))
