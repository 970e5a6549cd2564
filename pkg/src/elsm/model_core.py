"""Shared domain types, distance kernels and the neighbour-mean operator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class HyperParams:
    """Scalars and vectors driving the generative process."""

    n: int
    T: int
    K: int
    pi: np.ndarray | None = None
    m_prior: np.ndarray | None = None
    s: float = 1.0
    s1: float = 0.05
    s2: float = 0.2
    s3: float = 1.0
    s4: float = 0.5
    d: int = 2

    def __post_init__(self):
        for name in ("n", "T", "K", "d"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            setattr(self, name, int(value))
        if self.pi is None:
            self.pi = np.full(self.K, 1.0 / self.K)
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.pi.shape != (self.K,):
            raise ValueError(f"pi must have length K={self.K}, got shape {self.pi.shape}")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-9:
            raise ValueError("pi must be non-negative and sum to 1")
        if self.m_prior is None:
            self.m_prior = np.zeros(self.d)
        self.m_prior = np.asarray(self.m_prior, dtype=np.float64)
        if self.m_prior.shape != (self.d,):
            raise ValueError(f"m_prior must have length d={self.d}")
        for name in ("s", "s1", "s2", "s3", "s4"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
            setattr(self, name, value)

    @classmethod
    def benchmark_synthetic(cls) -> "HyperParams":
        """The community-detection benchmark configuration (n=100, T=10, K=5)."""
        return cls(n=100, T=10, K=5, m_prior=np.zeros(2), s=1.0, s1=0.05,
                   s2=0.2, s3=1.0, s4=0.5, d=2)

    def to_dict(self) -> dict:
        return {"n": self.n, "T": self.T, "K": self.K, "pi": self.pi.tolist(),
                "m_prior": self.m_prior.tolist(), "s": self.s, "s1": self.s1,
                "s2": self.s2, "s3": self.s3, "s4": self.s4, "d": self.d}

    @classmethod
    def from_dict(cls, raw: dict) -> "HyperParams":
        known = {"n", "T", "K", "pi", "m_prior", "s", "s1", "s2", "s3", "s4", "d"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class DynamicNetwork:
    """A fixed node set observed as ``T`` symmetric adjacency snapshots.

    ``snapshots`` is stored as a ``(T, n, n)`` float array.
    """

    snapshots: np.ndarray
    weighted: bool = False

    def __post_init__(self):
        A = np.asarray(self.snapshots, dtype=np.float64)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError(f"snapshots must have shape (T, n, n), got {A.shape}")
        if not np.all(np.isfinite(A)) or np.any(A < 0):
            raise ValueError("adjacency entries must be finite and non-negative")
        if not np.array_equal(A, np.swapaxes(A, 1, 2)):
            raise ValueError("adjacency snapshots must be symmetric")
        if np.any(np.diagonal(A, axis1=1, axis2=2) != 0):
            raise ValueError("adjacency snapshots must have a zero diagonal")
        if self.weighted:
            if np.any(A != np.round(A)):
                raise ValueError("weighted snapshots must hold non-negative integers")
        elif np.any((A != 0) & (A != 1)):
            raise ValueError("binary snapshots must hold entries in {0, 1}")
        self.snapshots = A

    @property
    def T(self) -> int:
        return self.snapshots.shape[0]

    @property
    def n(self) -> int:
        return self.snapshots.shape[1]

    def __len__(self) -> int:
        return self.T

    def __getitem__(self, t) -> np.ndarray:
        return self.snapshots[t]

    def binarized(self) -> "DynamicNetwork":
        return DynamicNetwork((self.snapshots > 0).astype(np.float64), weighted=False)

    def prefix(self, t: int) -> "DynamicNetwork":
        """The first ``t`` snapshots."""
        return DynamicNetwork(self.snapshots[:t].copy(), weighted=self.weighted)


@dataclass
class LatentTrajectory:
    """Per-snapshot embeddings plus the discrete latents of the full model.

    Memberships ``c`` are 1-based community labels; ``h`` row ``t-1`` holds the
    split indicators that produced snapshot ``t``.
    """

    Z: np.ndarray
    c: np.ndarray | None = None
    h: np.ndarray | None = None
    mu: np.ndarray | None = None
    alpha: np.ndarray | None = None

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.Z.ndim != 3:
            raise ValueError("Z must have shape (T, n, d)")
        T, n, d = self.Z.shape
        if self.c is not None:
            self.c = np.asarray(self.c, dtype=np.int64)
            if self.c.shape != (n,):
                raise ValueError("c must have length n")
            if n and self.c.min() < 1:
                raise ValueError("memberships are 1-based")
            if self.mu is not None and n and self.c.max() > len(self.mu):
                raise ValueError("membership exceeds number of centers")
        if self.h is not None:
            self.h = np.asarray(self.h, dtype=np.int64)
            if self.h.shape != (T - 1, n):
                raise ValueError(f"h must have shape {(T - 1, n)}")
            if np.any((self.h != 0) & (self.h != 1)):
                raise ValueError("h entries must be binary")
        if self.mu is not None:
            self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1, d)
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1, d)
            if self.alpha.shape[0] != T - 1:
                raise ValueError(f"alpha must have {T - 1} rows")

    @property
    def T(self) -> int:
        return self.Z.shape[0]

    @property
    def n(self) -> int:
        return self.Z.shape[1]

    @property
    def d(self) -> int:
        return self.Z.shape[2]


def _check_scale(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be strictly positive, got {value!r}")
    return value


def _sq_norm(diff) -> float | np.ndarray:
    diff = np.asarray(diff, dtype=np.float64)
    if not np.all(np.isfinite(diff)):
        raise ValueError("kernel input must be finite")
    return np.sum(diff * diff, axis=-1)


def edge_kernel_f(diff, s2: float):
    """Edge probability ``1 - tanh(|diff|^2 / s2^2)``."""
    s2 = _check_scale(s2, "s2")
    return 1.0 - np.tanh(_sq_norm(diff) / s2 ** 2)


def split_kernel_g(diff, s3: float):
    """Probability of joining a new community, ``1 - tanh(|diff|^2 / s3^2)``."""
    s3 = _check_scale(s3, "s3")
    return 1.0 - np.tanh(_sq_norm(diff) / s3 ** 2)


def influence_kernel_l(diff, s4: float):
    """Neighbour influence weight ``exp(-|diff|^2 / s4^2)``."""
    s4 = _check_scale(s4, "s4")
    return np.exp(-_sq_norm(diff) / s4 ** 2)


def neighbor_weights(Z_prev, A_prev, s4: float) -> np.ndarray:
    """Matrix of ``a_ij * l(z_i - z_j)`` with a zero diagonal."""
    Z_prev = np.asarray(Z_prev, dtype=np.float64)
    A_prev = np.asarray(A_prev, dtype=np.float64)
    n = Z_prev.shape[0]
    if A_prev.shape != (n, n):
        raise ValueError(f"A_prev shape {A_prev.shape} does not match {n} nodes")
    diff = Z_prev[:, None, :] - Z_prev[None, :, :]
    W = A_prev * influence_kernel_l(diff, s4)
    np.fill_diagonal(W, 0.0)
    return W


def neighbor_means(Z_prev, A_prev, s4: float) -> np.ndarray:
    """Neighbour-weighted means for every node at once; shape ``(n, d)``.

    Each row is a convex combination of the node's own previous embedding
    (weight 1) and its neighbours' (weight ``a_ij * l(z_i - z_j)``).
    """
    Z_prev = np.asarray(Z_prev, dtype=np.float64)
    W = neighbor_weights(Z_prev, A_prev, s4)
    return (Z_prev + W @ Z_prev) / (1.0 + W.sum(axis=1))[:, None]


def neighbor_mean(Z_prev, A_prev, i: int, s4: float) -> np.ndarray:
    """Neighbour-weighted mean for node ``i``."""
    Z_prev = np.asarray(Z_prev, dtype=np.float64)
    A_prev = np.asarray(A_prev, dtype=np.float64)
    n = Z_prev.shape[0]
    if A_prev.shape != (n, n):
        raise ValueError(f"A_prev shape {A_prev.shape} does not match {n} nodes")
    if not 0 <= i < n:
        raise IndexError(f"node index {i} out of range for {n} nodes")
    w = A_prev[i] * influence_kernel_l(Z_prev[i] - Z_prev, s4)
    w[i] = 0.0
    return (Z_prev[i] + w @ Z_prev) / (1.0 + w.sum())
