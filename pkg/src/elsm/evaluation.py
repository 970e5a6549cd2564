"""Community detection and link prediction protocols, metrics and baselines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.stats import rankdata

from .generator import substream
from .model_core import DynamicNetwork, neighbor_means

K_RANGE = (2, 10)


# clustering

def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = min(int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right")),
                      n - 1)
        centers[j] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(X, centers, max_iter):
    for _ in range(max_iter):
        dist = np.sum((X[:, None, :] - centers[None]) ** 2, axis=2)
        labels = np.argmin(dist, axis=1)
        new = centers.copy()
        for j in range(len(centers)):
            members = X[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    dist = np.sum((X[:, None, :] - centers[None]) ** 2, axis=2)
    labels = np.argmin(dist, axis=1)
    return labels, float(dist[np.arange(len(X)), labels].sum())


def canonical_labels(labels) -> np.ndarray:
    """Relabel so clusters are numbered by first appearance."""
    _, first, inverse = np.unique(np.asarray(labels), return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse].astype(np.int64)


def kmeans(points, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300,
           return_wcss: bool = False):
    """Lloyd's algorithm with k-means++ seeding; the best restart by WCSS wins."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    k = int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the number of points {X.shape[0]}")
    best_labels, best_wcss = None, np.inf
    for r in range(max(1, restarts)):
        rng = substream(seed, 7, r)
        labels, wcss = _lloyd(X, _kmeans_pp_init(X, k, rng), max_iter)
        if wcss < best_wcss - 1e-12:
            best_labels, best_wcss = labels, wcss
    labels = canonical_labels(best_labels)
    return (labels, best_wcss) if return_wcss else labels


def rbf_induced_adjacency(Z, variance: float = 1.0) -> np.ndarray:
    if not variance > 0:
        raise ValueError("variance must be strictly positive")
    Z = np.asarray(Z, dtype=np.float64)
    sq = np.sum((Z[:, None, :] - Z[None, :, :]) ** 2, axis=-1)
    W = np.exp(-sq / (2.0 * variance))
    np.fill_diagonal(W, 0.0)
    return W


def modularity(A, labels) -> float:
    """Newman modularity ``sum_c (e_cc - a_c^2)``; zero for an edgeless graph."""
    A = np.asarray(A, dtype=np.float64)
    labels = np.asarray(labels)
    if A.shape != (len(labels), len(labels)):
        raise ValueError("adjacency and labels disagree on the number of nodes")
    total = A.sum()
    if total <= 0:
        return 0.0
    onehot = (labels[:, None] == np.unique(labels)[None, :]).astype(np.float64)
    e = onehot.T @ A @ onehot / total
    a = e.sum(axis=1)
    return float(np.trace(e) - np.sum(a * a))


def _k_candidates(n: int, k_range) -> range:
    lo, hi = int(k_range[0]), min(int(k_range[1]), n)
    if lo < 1 or lo > hi:
        raise ValueError(f"invalid k range {k_range} for {n} nodes")
    return range(lo, hi + 1)


def select_k(Z_t, k_range=K_RANGE, seed: int = 0, restarts: int = 10):
    """Pick ``k`` maximising modularity of k-means labels on the RBF graph of ``Z_t``."""
    W = rbf_induced_adjacency(Z_t, 1.0)
    best = None
    for k in _k_candidates(len(Z_t), k_range):
        labels = kmeans(Z_t, k, seed=seed, restarts=restarts)
        q = modularity(W, labels)
        if best is None or q > best[2] + 1e-12:
            best = (k, labels, q)
    return best[0], best[1]


def nmi(labels_a, labels_b) -> float:
    """Mutual information normalised by the arithmetic mean of the entropies."""
    a, b = np.asarray(labels_a), np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label vectors must have equal length")
    n = a.size
    if n == 0:
        raise ValueError("label vectors are empty")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    p = table / n
    pa, pb = p.sum(axis=1), p.sum(axis=0)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log(p[nz] / np.outer(pa, pb)[nz])))
    ha = -float(np.sum(pa * np.log(pa)))
    hb = -float(np.sum(pb * np.log(pb)))
    if ha == 0 and hb == 0:
        return 1.0
    return float(np.clip(mi / (0.5 * (ha + hb)), 0.0, 1.0))


def spectral_embedding(A, k: int) -> np.ndarray:
    """Row-normalised bottom-``k`` eigenvectors of the symmetric normalised Laplacian."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds the number of nodes {n}")
    deg = A.sum(axis=1) + 1e-8
    inv_sqrt = 1.0 / np.sqrt(deg)
    L = np.eye(n) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
    _, vecs = eigh(L, subset_by_index=[0, k - 1])
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs / np.where(norms > 0, norms, 1.0)


def spectral_clustering(A, k: int, seed: int = 0, restarts: int = 10) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be at least 1")
    if k == 1:
        return np.zeros(np.asarray(A).shape[0], dtype=np.int64)
    return kmeans(spectral_embedding(A, k), k, seed=seed, restarts=restarts)


def spectral_select_k(A, k_range=K_RANGE, seed: int = 0, restarts: int = 10):
    """Spectral baseline with ``k`` chosen like the embedding pipeline: modularity of
    the labels on the RBF graph of the row-normalised spectral embedding."""
    best = None
    for k in _k_candidates(np.asarray(A).shape[0], k_range):
        U = spectral_embedding(A, k)
        labels = kmeans(U, k, seed=seed, restarts=restarts)
        q = modularity(rbf_induced_adjacency(U, 1.0), labels)
        if best is None or q > best[2] + 1e-12:
            best = (k, labels, q)
    return best[0], best[1]


# link prediction metrics

def _binary_truth(truth) -> np.ndarray:
    t = np.asarray(truth)
    if np.any((t != 0) & (t != 1)):
        raise ValueError("truth must be binary")
    return t.astype(bool)


def auc(scores, truth) -> float:
    """Mann-Whitney statistic; tied scores earn half credit."""
    s = np.asarray(scores, dtype=np.float64)
    t = _binary_truth(truth)
    if s.shape != t.shape:
        raise ValueError("scores and truth must have equal length")
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = rankdata(s)
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_max(scores, truth) -> tuple[float, float]:
    """Best F1 over thresholds ``score >= thr`` and the smallest threshold reaching it."""
    s = np.asarray(scores, dtype=np.float64)
    t = _binary_truth(truth)
    if s.shape != t.shape:
        raise ValueError("scores and truth must have equal length")
    if s.size == 0:
        raise ValueError("no scores given")
    n_pos = int(t.sum())
    if n_pos == 0:
        return 0.0, float(s.min())
    best_f1, best_thr = -1.0, float(s.min())
    for thr in np.unique(s):
        pred = s >= thr
        tp = int(np.sum(pred & t))
        if tp == 0:
            f1 = 0.0
        else:
            precision, recall = tp / int(pred.sum()), tp / n_pos
            f1 = 2 * precision * recall / (precision + recall)
        if f1 > best_f1 + 1e-15:
            best_f1, best_thr = f1, float(thr)
    return float(best_f1), best_thr


def bas_predict(history) -> np.ndarray:
    """Fraction of past snapshots in which each pair was linked."""
    H = np.asarray(getattr(history, "snapshots", history), dtype=np.float64)
    if H.ndim == 2:
        H = H[None]
    if H.shape[0] < 1:
        raise ValueError("history must hold at least one snapshot")
    return (H > 0).sum(axis=0) / H.shape[0]


def pair_scores(P, target) -> tuple[np.ndarray, np.ndarray]:
    """Lower-triangle entries of a score matrix and of the binarised target."""
    P = np.asarray(P, dtype=np.float64)
    rows, cols = np.tril_indices(P.shape[0], k=-1)
    return P[rows, cols], (np.asarray(target)[rows, cols] > 0).astype(np.int64)


@dataclass
class LinkPredResult:
    probabilities: np.ndarray
    auc: float
    f1: float
    threshold: float

    @classmethod
    def score(cls, P, target) -> "LinkPredResult":
        s, t = pair_scores(P, target)
        f1, thr = f1_max(s, t)
        return cls(probabilities=np.asarray(P, dtype=np.float64), auc=auc(s, t), f1=f1,
                   threshold=thr)


class UntrainedModelError(RuntimeError):
    pass


def predict_from_embeddings(Z_t, A_t, decoder, s4: float) -> np.ndarray:
    """Propagate ``Z_t`` one step through the neighbour mean and decode."""
    Z_next = neighbor_means(Z_t, A_t, s4)
    sq = np.sum((Z_next[:, None, :] - Z_next[None, :, :]) ** 2, axis=-1)
    P = np.clip(decoder.edge_probability(sq), 0.0, 1.0)
    np.fill_diagonal(P, 0.0)
    return P


def link_predict(model, history) -> np.ndarray:
    """Edge probabilities for the snapshot after ``history`` (``h = 0`` for the full model)."""
    if getattr(model, "epochs_trained", 0) < 1:
        raise UntrainedModelError("link prediction requires a trained model")
    net = history if isinstance(history, DynamicNetwork) else DynamicNetwork(history)
    emb = model.embeddings(net)
    A_last = net.snapshots[-1]
    if model.decoder.kind != "poisson-learned":
        A_last = (A_last > 0).astype(np.float64)
    return predict_from_embeddings(emb["nu"][-1], A_last, model.decoder,
                                   model.decoder.s4_value())


# protocols

@dataclass
class CommunityResult:
    labels: list[np.ndarray]
    k_per_t: list[int]
    modularity_per_t: list[float]
    successive_nmi: list[float]
    avg_modularity: float = field(init=False)
    avg_nmi: float = field(init=False)

    def __post_init__(self):
        self.avg_modularity = float(np.mean(self.modularity_per_t))
        self.avg_nmi = float(np.mean(self.successive_nmi)) if self.successive_nmi else float("nan")

    def to_dict(self) -> dict:
        return {"labels": [np.asarray(l).tolist() for l in self.labels],
                "k_per_t": [int(k) for k in self.k_per_t],
                "modularity_per_t": [float(q) for q in self.modularity_per_t],
                "successive_nmi": [float(v) for v in self.successive_nmi],
                "avg_modularity": self.avg_modularity, "avg_nmi": self.avg_nmi}


def _assemble(network, labels, ks) -> CommunityResult:
    A = np.asarray(getattr(network, "snapshots", network), dtype=np.float64)
    mods = [modularity(A[t], labels[t]) for t in range(len(labels))]
    succ = [nmi(labels[t], labels[t + 1]) for t in range(len(labels) - 1)]
    return CommunityResult(labels=labels, k_per_t=ks, modularity_per_t=mods, successive_nmi=succ)


def community_pipeline(embeddings, network, k_range=K_RANGE, seed: int = 0,
                       restarts: int = 10) -> CommunityResult:
    """Per snapshot: choose ``k`` on the embeddings, then score on the observed graph.

    ``embeddings`` is a ``(T, n, d)`` array or a trained model.
    """
    if hasattr(embeddings, "embeddings"):
        embeddings = embeddings.embeddings(network)["nu"]
    Z = np.asarray(embeddings, dtype=np.float64)
    labels, ks = [], []
    for t in range(Z.shape[0]):
        k, lab = select_k(Z[t], k_range, seed=seed, restarts=restarts)
        labels.append(lab)
        ks.append(k)
    return _assemble(network, labels, ks)


def spectral_pipeline(network, k_range=K_RANGE, seed: int = 0,
                      restarts: int = 10) -> CommunityResult:
    A = np.asarray(getattr(network, "snapshots", network), dtype=np.float64)
    labels, ks = [], []
    for t in range(A.shape[0]):
        k, lab = spectral_select_k(A[t], k_range, seed=seed, restarts=restarts)
        labels.append(lab)
        ks.append(k)
    return _assemble(network, labels, ks)


@dataclass
class RollingResult:
    targets: list[int]
    model: list[LinkPredResult]
    baseline: list[LinkPredResult]

    @property
    def avg_auc(self) -> float:
        return float(np.mean([r.auc for r in self.model])) if self.model else float("nan")

    @property
    def avg_f1(self) -> float:
        return float(np.mean([r.f1 for r in self.model])) if self.model else float("nan")

    @property
    def baseline_avg_auc(self) -> float:
        return float(np.mean([r.auc for r in self.baseline]))

    @property
    def baseline_avg_f1(self) -> float:
        return float(np.mean([r.f1 for r in self.baseline]))


def rolling_link_prediction(network: DynamicNetwork, train_fn=None, last: int | None = None,
                            binarize_target: bool = True) -> RollingResult:
    """Train on snapshots ``1..t`` and predict ``t+1`` for every ``t >= 2``.

    ``train_fn(prefix_network) -> model``; when omitted only the frequency
    baseline is scored.  ``last`` restricts to the final few targets.
    Targets are 0-based snapshot indices.
    """
    targets = list(range(2, network.T))
    if last is not None:
        targets = targets[-int(last):]
    model_res, base_res = [], []
    for tgt in targets:
        history = network.prefix(tgt)
        truth = network.snapshots[tgt]
        if binarize_target:
            truth = (truth > 0).astype(np.float64)
        base_res.append(LinkPredResult.score(bas_predict(history), truth))
        if train_fn is not None:
            model = train_fn(history)
            model_res.append(LinkPredResult.score(link_predict(model, history), truth))
    return RollingResult(targets=targets, model=model_res, baseline=base_res)
