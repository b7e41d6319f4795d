"""Allocation-matrix normalization, task clustering and plot-ready exports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DegenerateRowError

LINKAGE = "average"
METRIC = "euclidean"
LAYER_AGGREGATION = "mean"


def normalize_rows(matrix) -> np.ndarray:
    """Divide every row by its sum."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"expected a 2-D matrix, got shape {m.shape}")
    if np.any(m < 0):
        raise ContractError("allocation matrices must be nonnegative")
    sums = m.sum(axis=1, keepdims=True)
    zero = np.flatnonzero(sums[:, 0] == 0)
    if zero.size:
        raise DegenerateRowError(f"row {int(zero[0])} sums to zero")
    return m / sums


def aggregate_layers(matrices: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    """Row-normalize each layer's matrix and average them."""
    arr = np.asarray(matrices, dtype=np.float64)
    if arr.ndim == 2:
        return normalize_rows(arr)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ContractError(f"expected T x S or L x T x S, got shape {arr.shape}")
    return np.mean([normalize_rows(m) for m in arr], axis=0)


@dataclass
class DendrogramNode:
    leaf: Optional[int] = None
    left: Optional["DendrogramNode"] = None
    right: Optional["DendrogramNode"] = None
    height: float = 0.0
    count: int = 1

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None

    def leaves(self) -> list:
        if self.is_leaf:
            return [self.leaf]
        return self.left.leaves() + self.right.leaves()

    def merge_heights(self) -> list:
        if self.is_leaf:
            return []
        return self.left.merge_heights() + self.right.merge_heights() + [self.height]

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.leaf}
        return {"left": self.left.to_dict(), "right": self.right.to_dict(), "height": self.height, "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "DendrogramNode":
        if "leaf" in d:
            return cls(leaf=int(d["leaf"]))
        left, right = cls.from_dict(d["left"]), cls.from_dict(d["right"])
        return cls(left=left, right=right, height=float(d["height"]), count=int(d.get("count", left.count + right.count)))


@dataclass
class Clustering:
    root: DendrogramNode
    merges: list = field(default_factory=list)  # (a, b, height, count) with scipy-style cluster ids


def average_linkage(points: np.ndarray) -> Clustering:
    """Agglomerative clustering, average linkage, Euclidean distance.

    Clusters are numbered like scipy: leaves 0..n-1, the k-th merge creates
    n + k. Equal distances resolve to the pair with the lowest ids.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < 1:
        raise ContractError("need at least one row to cluster")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    nodes = {i: DendrogramNode(leaf=i) for i in range(n)}
    # distances between live clusters, keyed by (low id, high id)
    live = {(i, j): dist[i, j] for i in range(n) for j in range(i + 1, n)}
    merges = []
    next_id = n
    while len(nodes) > 1:
        (a, b), h = min(live.items(), key=lambda kv: (kv[1], kv[0]))
        na, nb = nodes.pop(a), nodes.pop(b)
        merged = DendrogramNode(left=na, right=nb, height=float(h), count=na.count + nb.count)
        for c in nodes:
            dac = live.pop((min(a, c), max(a, c)))
            dbc = live.pop((min(b, c), max(b, c)))
            live[(c, next_id)] = (na.count * dac + nb.count * dbc) / merged.count
        live.pop((a, b))
        nodes[next_id] = merged
        merges.append((a, b, float(h), merged.count))
        next_id += 1
    return Clustering(root=next(iter(nodes.values())), merges=merges)


def cluster_tasks(matrices) -> DendrogramNode:
    """Dendrogram over tasks from a T x S matrix or a stack of per-layer matrices."""
    return average_linkage(aggregate_layers(matrices)).root


def cut_largest_gap(root: DendrogramNode) -> np.ndarray:
    """Flat labels from cutting where consecutive merge heights jump the most.

    Labels are numbered by first appearance in leaf-index order. With fewer
    than two merges there is no gap and every task lands in one cluster.
    """
    leaves = sorted(root.leaves())
    n = len(leaves)
    heights = sorted(root.merge_heights())
    if len(heights) < 2:
        return np.zeros(n, dtype=np.int64)
    gaps = np.diff(heights)
    threshold = heights[int(np.argmax(gaps))]
    labels = np.full(n, -1, dtype=np.int64)

    def assign(node, label):
        for leaf in node.leaves():
            labels[leaf] = label

    groups = []

    def walk(node):
        if node.is_leaf or node.height <= threshold:
            groups.append(node)
            return
        walk(node.left)
        walk(node.right)

    walk(root)
    groups.sort(key=lambda g: min(g.leaves()))
    for label, g in enumerate(groups):
        assign(g, label)
    return labels


def same_partition(a, b) -> bool:
    """True when two label vectors describe the same partition."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def top_split(root: DendrogramNode) -> tuple:
    if root.is_leaf:
        return (tuple(root.leaves()),)
    return tuple(sorted((tuple(sorted(root.left.leaves())), tuple(sorted(root.right.leaves())))))


@dataclass
class AllocationSnapshot:
    layer: Optional[int]
    step: Optional[int]
    matrix: np.ndarray  # T x S
    task_weight_stats: Optional[np.ndarray] = None
    raw_logit_means: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        m = np.asarray(self.matrix, dtype=np.float64)
        out = {
            "layer": self.layer,
            "step": self.step,
            "tasks": int(m.shape[0]),
            "skills": int(m.shape[1]),
            "matrix": [float(v) for v in m.reshape(-1)],
        }
        if self.task_weight_stats is not None:
            out["task_weight_stats"] = [float(v) for v in np.asarray(self.task_weight_stats).reshape(-1)]
        if self.raw_logit_means is not None:
            out["raw_logit_means"] = [float(v) for v in np.asarray(self.raw_logit_means).reshape(-1)]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AllocationSnapshot":
        m = np.asarray(d["matrix"], dtype=np.float64).reshape(d["tasks"], d["skills"])
        tw = d.get("task_weight_stats")
        rl = d.get("raw_logit_means")
        return cls(d["layer"], d["step"], m, None if tw is None else np.asarray(tw), None if rl is None else np.asarray(rl))


def load_schema(name: str) -> dict:
    return json.loads(resources.files("orchmoe").joinpath("schemas", name).read_text())


def validate_json(doc: dict, schema_name: str) -> None:
    import jsonschema

    jsonschema.validate(doc, load_schema(schema_name))


def snapshot_csv(snapshot: AllocationSnapshot) -> str:
    m = np.asarray(snapshot.matrix, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task"] + [f"skill_{j}" for j in range(m.shape[1])])
    for t, row in enumerate(m):
        w.writerow([t] + ["%.17g" % v for v in row])
    return buf.getvalue()


def export_snapshot(snapshot: AllocationSnapshot, path, fmt: str = "json") -> None:
    path = Path(path)
    if fmt == "json":
        text = json.dumps(snapshot.to_dict(), indent=1) + "\n"
    elif fmt == "csv":
        text = snapshot_csv(snapshot)
    else:
        raise ContractError(f"format must be json or csv, got {fmt!r}")
    try:
        path.write_text(text)
    except OSError as e:
        raise OSError(f"cannot write snapshot to {path}: {e.strerror}") from e


def import_snapshot(path) -> AllocationSnapshot:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".csv":
        rows = list(csv.reader(io.StringIO(text)))
        m = np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)
        return AllocationSnapshot(None, None, m.reshape(len(rows) - 1, len(rows[0]) - 1))
    return AllocationSnapshot.from_dict(json.loads(text))


def dendrogram_document(root: DendrogramNode, labels: Optional[np.ndarray] = None, source: str = "") -> dict:
    doc = {
        "linkage": LINKAGE,
        "metric": METRIC,
        "layer_aggregation": LAYER_AGGREGATION,
        "source": source,
        "n_leaves": len(root.leaves()),
        "tree": root.to_dict(),
    }
    if labels is not None:
        doc["largest_gap_labels"] = [int(v) for v in labels]
    return doc
