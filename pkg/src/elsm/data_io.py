"""Edge-list ingestion, dataset recipes and artifact serialization.

Network text format::

    n T weighted            # header; weighted is 0 or 1
    t i j w                 # one line per nonzero entry with i > j

Snapshot indices ``t`` are 0-based.  Blank lines and ``#`` comments are
ignored.  Weights are written as integers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .model_core import DynamicNetwork

EMBEDDINGS_SCHEMA = "elsm.embeddings/1"
TRUTH_SCHEMA = "elsm.truth/1"


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


# temporal edge lists

@dataclass
class TemporalEdgeList:
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    weights: np.ndarray
    node_ids: list[str] = field(default_factory=list)
    self_loops_dropped: int = 0

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n(self) -> int:
        return len(self.node_ids)


_SPLIT = re.compile(r"[,\s]+")


def load_edge_list(path) -> TemporalEdgeList:
    """Read ``t u v [w]`` records delimited by whitespace or commas.

    Node ids are arbitrary tokens remapped to dense indices in order of first
    appearance; self-loops are dropped and counted.
    """
    path = Path(path)
    ids: dict[str, int] = {}
    times, us, vs, ws = [], [], [], []
    loops = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = [p for p in _SPLIT.split(text) if p]
            if len(parts) not in (3, 4):
                raise FormatError(f"{path}:{lineno}: expected 't u v [w]', got {line.strip()!r}")
            try:
                t = float(parts[0])
                w = float(parts[3]) if len(parts) == 4 else 1.0
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric time or weight") from exc
            if not np.isfinite(t):
                raise FormatError(f"{path}:{lineno}: non-finite timestamp")
            if not (w >= 0 and w == int(w)):
                raise FormatError(f"{path}:{lineno}: weight must be a non-negative integer")
            a = ids.setdefault(parts[1], len(ids))
            b = ids.setdefault(parts[2], len(ids))
            if a == b:
                loops += 1
                continue
            times.append(t)
            us.append(a)
            vs.append(b)
            ws.append(w)
    return TemporalEdgeList(np.asarray(times, dtype=np.float64), np.asarray(us, dtype=np.int64),
                            np.asarray(vs, dtype=np.int64), np.asarray(ws, dtype=np.float64),
                            list(ids), loops)


def aggregate_windows(edges: TemporalEdgeList, window: float, count: int,
                      binarize: bool = False, start: float | None = None,
                      mutual: bool = False) -> DynamicNetwork:
    """Bucket events into ``count`` windows of length ``window`` from ``start``.

    Both orientations of a pair accumulate into the same symmetric entry.
    With ``mutual`` a pair only counts in a window where it was recorded in
    both directions.  Events outside the covered range are ignored.
    """
    if not window > 0:
        raise ValueError("window must be strictly positive")
    count = int(count)
    if count < 1:
        raise ValueError("count must be at least 1")
    n = edges.n
    start = float(edges.times.min()) if start is None and len(edges) else (start or 0.0)
    idx = np.floor((edges.times - start) / window).astype(np.int64)
    keep = (idx >= 0) & (idx < count)
    if mutual:
        directed = np.zeros((count, n, n))
        np.add.at(directed, (idx[keep], edges.u[keep], edges.v[keep]), edges.weights[keep])
        A = np.minimum(directed, np.swapaxes(directed, 1, 2))
    else:
        A = np.zeros((count, n, n))
        np.add.at(A, (idx[keep], edges.u[keep], edges.v[keep]), edges.weights[keep])
        A = A + np.swapaxes(A, 1, 2)
    if binarize:
        A = (A > 0).astype(np.float64)
    return DynamicNetwork(A, weighted=not binarize)


def filter_top_nodes(network: DynamicNetwork, k: int,
                     criterion: str = "total-weight") -> tuple[DynamicNetwork, np.ndarray]:
    """Keep the ``k`` highest-ranked nodes; ties go to the lower original index.

    Returns the filtered network and the kept original indices (ascending).
    """
    A = network.snapshots
    if not 0 <= k <= network.n:
        raise ValueError(f"k={k} outside [0, {network.n}]")
    if criterion == "total-weight":
        score = A.sum(axis=(0, 2))
    elif criterion == "unique-neighbors":
        score = (A.sum(axis=0) > 0).sum(axis=1).astype(np.float64)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    order = np.lexsort((np.arange(network.n), -score))
    kept = np.sort(order[:k])
    return DynamicNetwork(A[:, kept][:, :, kept], weighted=network.weighted), kept


def filter_sparse_snapshots(network: DynamicNetwork, min_nonzero: int) -> DynamicNetwork:
    """Drop snapshots with fewer than ``min_nonzero`` nonzero entries (full matrix)."""
    counts = (network.snapshots != 0).sum(axis=(1, 2))
    return DynamicNetwork(network.snapshots[counts >= int(min_nonzero)], weighted=network.weighted)


# dataset recipes

@dataclass(frozen=True)
class DatasetRecipe:
    """Order of application: aggregate, binarize, keep top nodes, drop sparse snapshots.

    ``time_unit`` states how raw timestamps must be expressed before loading.
    """

    name: str
    window: float
    count: int
    binarize: bool
    time_unit: str
    top_k: int | None = None
    criterion: str = "total-weight"
    min_nonzero: int = 0
    mutual: bool = False
    description: str = ""


RECIPES = {
    "enron-full": DatasetRecipe(
        "enron-full", window=1, count=12, binarize=False, time_unit="month index (2002-01 = 0)",
        description="monthly email counts for 2002; each message counted once per unordered pair"),
    "enron-full-binary": DatasetRecipe(
        "enron-full-binary", window=1, count=12, binarize=True,
        time_unit="month index (2002-01 = 0)", description="binary version of enron-full"),
    "enron-50": DatasetRecipe(
        "enron-50", window=1, count=37, binarize=True, time_unit="month index",
        top_k=50, criterion="total-weight",
        description="37 monthly binary snapshots, 50 individuals with most emails"),
    "nips-110": DatasetRecipe(
        "nips-110", window=1, count=17, binarize=True, time_unit="year index (1987 = 0)",
        top_k=110, criterion="unique-neighbors",
        description="yearly binary co-authorship, 110 authors with most unique co-authors"),
    "infocom": DatasetRecipe(
        "infocom", window=3600, count=93, binarize=True, time_unit="seconds",
        min_nonzero=72, mutual=True,
        description="hourly mutual proximity; snapshots with < 72 nonzero entries dropped"),
}

# Raw datasets are not shipped; fill in local checksums after downloading.
DATASET_SOURCES = {
    "enron": {"url": "https://www.cs.cmu.edu/~enron/", "sha256": None},
    "nips": {"url": "http://www.cs.nyu.edu/~roweis/data.html", "sha256": None},
    "infocom": {"url": "https://crawdad.org/cambridge/haggle/", "sha256": None},
}


def apply_recipe(edges: TemporalEdgeList, recipe: DatasetRecipe | str,
                 start: float | None = None) -> DynamicNetwork:
    if isinstance(recipe, str):
        recipe = RECIPES[recipe]
    net = aggregate_windows(edges, recipe.window, recipe.count, binarize=recipe.binarize,
                            start=start, mutual=recipe.mutual)
    if recipe.top_k is not None:
        net, _ = filter_top_nodes(net, min(recipe.top_k, net.n), recipe.criterion)
    if recipe.min_nonzero:
        net = filter_sparse_snapshots(net, recipe.min_nonzero)
    return net


def month_index(unix_seconds: float, origin_year: int) -> int:
    """Months elapsed since January of ``origin_year`` (UTC)."""
    dt = datetime.fromtimestamp(unix_seconds, tz=timezone.utc)
    return (dt.year - origin_year) * 12 + dt.month - 1


def verify_checksum(path, sha256: str) -> None:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    if digest != sha256.lower():
        raise ValueError(f"{path}: checksum {digest} does not match {sha256}")


# network files

def save_network(network: DynamicNetwork, path) -> None:
    A = network.snapshots
    T, n, _ = A.shape
    t_idx, i_idx, j_idx = np.nonzero(np.tril(A, k=-1))
    lines = [f"{n} {T} {int(network.weighted)}"]
    lines += [f"{t} {i} {j} {int(A[t, i, j])}" for t, i, j in zip(t_idx, i_idx, j_idx)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_network(path) -> DynamicNetwork:
    path = Path(path)
    header = None
    A = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            try:
                vals = [int(p) for p in parts]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: expected integers") from exc
            if header is None:
                if len(vals) != 3 or vals[0] < 1 or vals[1] < 1 or vals[2] not in (0, 1):
                    raise FormatError(f"{path}:{lineno}: header must be 'n T weighted'")
                header = vals
                A = np.zeros((vals[1], vals[0], vals[0]))
                continue
            if len(vals) != 4:
                raise FormatError(f"{path}:{lineno}: expected 't i j w'")
            t, i, j, w = vals
            n, T = header[0], header[1]
            if not (0 <= t < T and 0 <= j < i < n):
                raise FormatError(f"{path}:{lineno}: entry ({t}, {i}, {j}) does not fit "
                                  f"header n={n} T={T} with i > j")
            if w < 0:
                raise FormatError(f"{path}:{lineno}: negative weight")
            if not header[2] and w != 1:
                raise FormatError(f"{path}:{lineno}: binary network with weight {w}")
            A[t, i, j] = w
            A[t, j, i] = w
    if header is None:
        raise FormatError(f"{path}: missing header")
    return DynamicNetwork(A, weighted=bool(header[2]))


def toy_network() -> DynamicNetwork:
    """The shipped 5-node, 3-snapshot fixture."""
    with resources.as_file(resources.files("elsm") / "data" / "toy5.net") as p:
        return load_network(p)


# JSON and CSV artifacts

def _to_jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def save_embeddings(arrays: dict, path, variant: str) -> None:
    """Variational parameters keyed by name; ``nu`` is ``(T, n, d)``."""
    save_json({"schema": EMBEDDINGS_SCHEMA, "variant": variant, **arrays}, path)


def load_embeddings(path) -> dict:
    raw = load_json(path)
    if raw.get("schema") != EMBEDDINGS_SCHEMA:
        raise FormatError(f"{path}: not an embeddings document")
    out = {"variant": raw["variant"]}
    for key, value in raw.items():
        if key not in ("schema", "variant"):
            out[key] = np.asarray(value, dtype=np.float64)
    return out


def save_ground_truth(trajectory, path) -> None:
    save_json({"schema": TRUTH_SCHEMA, "Z": trajectory.Z, "c": trajectory.c,
               "h": trajectory.h, "mu": trajectory.mu, "alpha": trajectory.alpha}, path)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def write_training_log(log_rows, path) -> None:
    from .trainer import LOG_COLUMNS

    write_csv(path, LOG_COLUMNS, ([r[c] for c in LOG_COLUMNS] for r in log_rows))


def write_community_csv(result, path) -> None:
    rows = []
    for t in range(len(result.labels)):
        succ = result.successive_nmi[t - 1] if t > 0 else ""
        rows.append([t, result.k_per_t[t], result.modularity_per_t[t], succ])
    rows.append(["average", "", result.avg_modularity,
                 "" if not result.successive_nmi else result.avg_nmi])
    write_csv(path, ["t", "k", "modularity", "successive_nmi"], rows)
