import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from orchmoe.analysis import (
    AllocationSnapshot,
    DendrogramNode,
    aggregate_layers,
    average_linkage,
    cluster_tasks,
    cut_largest_gap,
    dendrogram_document,
    export_snapshot,
    import_snapshot,
    normalize_rows,
    same_partition,
    snapshot_csv,
    top_split,
    validate_json,
)
from orchmoe.errors import ContractError, DegenerateRowError


def test_normalize_examples():
    assert normalize_rows([[1.0, 1.0], [3.0, 1.0]]).tolist() == [[0.5, 0.5], [0.75, 0.25]]
    assert normalize_rows([[0.0, 2.0]]).tolist() == [[0.0, 1.0]]


def test_zero_row_is_degenerate():
    with pytest.raises(DegenerateRowError) as exc:
        normalize_rows([[1.0, 1.0], [0.0, 0.0]])
    assert "row 1" in str(exc.value)


def test_negative_entries_rejected():
    with pytest.raises(ContractError):
        normalize_rows([[1.0, -1.0]])


positive = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=st.floats(0.01, 100.0))


@settings(max_examples=60, deadline=None)
@given(positive, st.floats(0.1, 50.0))
def test_normalize_idempotent_and_scale_invariant(m, c):
    n = normalize_rows(m)
    assert np.max(np.abs(n.sum(axis=1) - 1)) < 1e-12
    assert np.max(np.abs(normalize_rows(n) - n)) < 1e-12
    assert np.max(np.abs(normalize_rows(c * m) - n)) < 1e-12


def test_aggregate_layers_means_normalized():
    a = np.array([[1.0, 3.0]])
    b = np.array([[2.0, 2.0]])
    assert np.allclose(aggregate_layers([a, b]), [[0.375, 0.625]])


def test_single_task_is_a_leaf():
    root = cluster_tasks(np.array([[0.2, 0.8]]))
    assert root.is_leaf and root.leaves() == [0]
    assert cut_largest_gap(root).tolist() == [0]


def test_identical_rows_merge_at_zero():
    root = cluster_tasks(np.array([[0.5, 0.5], [0.1, 0.9], [0.5, 0.5]]))
    c = average_linkage(normalize_rows(np.array([[0.5, 0.5], [0.1, 0.9], [0.5, 0.5]])))
    assert c.merges[0][:3] == (0, 2, 0.0)
    assert sorted(root.leaves()) == [0, 1, 2]


def test_planted_blocks_split_at_root(rng):
    rows = np.vstack([np.tile([0.9, 0.1, 0.0], (3, 1)), np.tile([0.0, 0.2, 0.8], (3, 1))]) + rng.uniform(0, 0.02, (6, 3))
    perm = rng.permutation(6)
    root = cluster_tasks(rows[perm])
    truth = (np.arange(6) >= 3).astype(int)[perm]
    assert same_partition(cut_largest_gap(root), truth)
    assert top_split(root) == tuple(sorted((tuple(np.flatnonzero(truth == 0)), tuple(np.flatnonzero(truth == 1)))))


@pytest.mark.parametrize("seed", range(5))
def test_matches_scipy_average_linkage(seed):
    hierarchy = pytest.importorskip("scipy.cluster.hierarchy")
    pts = np.random.default_rng(seed).uniform(size=(9, 4))
    ours = np.array([[a, b, h, c] for a, b, h, c in average_linkage(pts).merges])
    ref = hierarchy.linkage(pts, method="average", metric="euclidean")
    assert np.max(np.abs(ours[:, 2] - ref[:, 2])) < 1e-12
    assert np.array_equal(np.sort(ours[:, :2], axis=1), np.sort(ref[:, :2], axis=1))
    assert np.array_equal(ours[:, 3], ref[:, 3])


def test_row_scale_and_column_permutation_invariance(rng):
    m = rng.uniform(0.1, 1.0, size=(7, 4))
    base = cut_largest_gap(cluster_tasks(m))
    scaled = m * rng.uniform(0.5, 5.0, size=(7, 1))
    assert same_partition(cut_largest_gap(cluster_tasks(scaled)), base)
    assert same_partition(cut_largest_gap(cluster_tasks(m[:, rng.permutation(4)])), base)


@pytest.mark.parametrize("G", [2, 3, 4])
@pytest.mark.parametrize("seed", range(5))
def test_largest_gap_recovers_separated_groups(G, seed):
    rng = np.random.default_rng([G, seed])
    centers = np.eye(G, 6) * 0.9 + 0.02
    labels = np.arange(3 * G) % G
    rows = centers[labels] + rng.uniform(0, 0.01, size=(3 * G, 6))
    assert same_partition(cut_largest_gap(cluster_tasks(rows)), labels)


def test_dendrogram_round_trip_and_schema():
    root = cluster_tasks(np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]]))
    doc = dendrogram_document(root, cut_largest_gap(root), source="test")
    validate_json(doc, "dendrogram.schema.json")
    back = DendrogramNode.from_dict(json.loads(json.dumps(doc))["tree"])
    assert back.to_dict() == root.to_dict()


def test_snapshot_json_round_trip_is_bitwise(tmp_path, rng):
    snap = AllocationSnapshot(0, 12, rng.uniform(size=(3, 4)), rng.uniform(size=3), rng.normal(size=3))
    path = tmp_path / "a.json"
    export_snapshot(snap, path)
    doc = json.loads(path.read_text())
    assert list(doc)[:5] == ["layer", "step", "tasks", "skills", "matrix"]
    validate_json(doc, "allocation_snapshot.schema.json")
    back = import_snapshot(path)
    assert back.matrix.tobytes() == snap.matrix.tobytes()
    assert back.task_weight_stats.tobytes() == snap.task_weight_stats.tobytes()


def test_snapshot_csv_round_trip_is_bitwise(tmp_path, rng):
    m = rng.uniform(size=(2, 2)) / 3
    snap = AllocationSnapshot(0, 0, m)
    text = snapshot_csv(snap)
    assert text.count("\n") == 3 and text.startswith("task,skill_0,skill_1\n")
    path = tmp_path / "a.csv"
    export_snapshot(snap, path, "csv")
    assert import_snapshot(path).matrix.tobytes() == m.tobytes()


def test_schema_rejects_extra_fields():
    jsonschema = pytest.importorskip("jsonschema")
    doc = AllocationSnapshot(0, 0, np.ones((1, 1))).to_dict()
    doc["surprise"] = 1
    with pytest.raises(jsonschema.ValidationError):
        validate_json(doc, "allocation_snapshot.schema.json")


def test_export_unknown_format(tmp_path):
    with pytest.raises(ContractError):
        export_snapshot(AllocationSnapshot(0, 0, np.ones((1, 1))), tmp_path / "x", "xml")
