import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pumacgl.graph import build_graph
from pumacgl.memory import (BankError, CondensedGraph, MemoryBank, SampledGraph, bank_rows, load_bank, load_entry,
                            sample_balanced_mean, sample_random_nodes, save_bank, sparsify_subgraph, update_memory)
from pumacgl.serialize import FormatError
from pumacgl.stream import TaskSpec


def make_task(X, y, edges=(), task_id=0):
    y = np.asarray(y)
    g = build_graph(X, edges, y, train=np.ones(len(y), bool))
    return TaskSpec(task_id, tuple(sorted(set(y.tolist()))), g, np.arange(len(y)))


def entry(k, b=3, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return CondensedGraph(k, rng.normal(size=(b, d)).astype(np.float32), np.arange(b) % 2 + 2 * k, {"seed": seed})


def test_update_appends():
    bank = update_memory(MemoryBank(), entry(0))
    assert len(bank) == 1


def test_update_twice_same_id_fails():
    bank = update_memory(MemoryBank(), entry(0))
    with pytest.raises(BankError):
        update_memory(bank, entry(0))


def test_update_is_persistent():
    b0 = MemoryBank()
    b1 = update_memory(b0, entry(0))
    b2 = update_memory(b1, entry(1))
    assert (len(b0), len(b1), len(b2)) == (0, 1, 2)
    assert b2.budgets == [3, 3]


def test_bank_rows_pools_entries():
    bank = update_memory(update_memory(MemoryBank(), entry(0)), entry(1, b=4))
    X, y = bank_rows(bank)
    assert X.shape == (7, 2) and y.tolist() == [0, 1, 0, 2, 3, 2, 3]


def test_bank_rows_empty():
    with pytest.raises(BankError):
        bank_rows(MemoryBank())


def test_random_all_train_nodes(small_stream):
    t = small_stream[0]
    tr = t.train_nodes
    budgets = {c: int((t.incoming.labels[tr] == c).sum()) for c in t.classes}
    r = sample_random_nodes(t, budgets, seed=1)
    assert sorted(r.node_ids.tolist()) == sorted(tr.tolist())
    np.testing.assert_array_equal(r.features, t.incoming.features[r.node_ids])


def test_random_counts_and_seed(small_stream):
    t = small_stream[1]
    budgets = dict(zip(t.classes, (3, 5)))
    a, b = sample_random_nodes(t, budgets, 4), sample_random_nodes(t, budgets, 4)
    assert a == b
    for c, n in budgets.items():
        assert (a.labels == c).sum() == n
        assert set(t.incoming.labels[a.node_ids[a.labels == c]]) == {c}
        assert t.incoming.train_mask[a.node_ids].all()


def test_budget_outside_task(small_stream):
    with pytest.raises(BankError):
        sample_random_nodes(small_stream[0], {99: 1}, 0)


def test_mean_nearest_example():
    t = make_task([[0.0], [1.0], [10.0]], [0, 0, 0])
    assert sample_balanced_mean(t, {0: 1}).node_ids.tolist() == [1]


def test_mean_nearest_ties_by_id():
    t = make_task(np.ones((5, 2)), [0] * 5)
    assert sample_balanced_mean(t, {0: 3}).node_ids.tolist() == [0, 1, 2]


def test_mean_nearest_single_node():
    t = make_task([[3.0], [1.0], [2.0]], [0, 1, 1])
    r = sample_balanced_mean(t, {0: 1, 1: 1})
    assert r.node_ids[r.labels == 0].tolist() == [0]


def clique_task(n=12):
    iu = np.triu_indices(n, 1)
    return make_task(np.eye(n), [0] * n, np.stack(iu, 1))


def test_sparsify_keep_none():
    r = sparsify_subgraph(clique_task(), {0: 6}, 0.0, seed=0)
    assert r.edges.shape == (0, 2)


def test_sparsify_keep_all():
    r = sparsify_subgraph(clique_task(), {0: 6}, 1.0, seed=0)
    assert r.edges.shape[0] == 15  # K6


def test_sparsify_same_nodes_as_random():
    t = clique_task()
    assert sparsify_subgraph(t, {0: 5}, 0.5, seed=3).node_ids.tolist() == \
        sample_random_nodes(t, {0: 5}, 3).node_ids.tolist()


def test_sparsify_binomial_edge_count():
    t = clique_task(20)
    ratio, seeds, total = 0.3, 40, 10 * 9 // 2
    kept = [sparsify_subgraph(t, {0: 10}, ratio, seed=s).edges.shape[0] for s in range(seeds)]
    se = np.sqrt(total * ratio * (1 - ratio) / seeds)
    assert abs(np.mean(kept) - ratio * total) < 3 * se


def test_sampled_rows_propagate_with_edges():
    r = sparsify_subgraph(make_task([[1.0], [3.0]], [0, 0], [(0, 1)]), {0: 2}, 1.0, seed=0)
    np.testing.assert_allclose(r.rows(), [[2.0], [2.0]])


def random_entry(rng, k, kind):
    b = int(rng.integers(1, 5))
    d = int(rng.integers(1, 4))
    X = rng.normal(size=(b, d)).astype(np.float32)
    X.ravel()[0] = rng.choice([np.float32(-0.0), np.float32(1e-40), X.ravel()[0]])
    y = rng.integers(0, 3, b) + 3 * k
    if kind == "condensed":
        return CondensedGraph(k, X, y, {"seed": int(rng.integers(100))})
    e = np.array([[0, b - 1]]) if b > 1 and rng.random() < 0.5 else np.zeros((0, 2), np.int64)
    return SampledGraph(k, X, y, rng.integers(0, 50, b), e, {"selector": "random"})


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 3), st.sampled_from(["condensed", "random_nodes"]))
@settings(max_examples=25, deadline=None)
def test_bank_round_trip(tmp_path_factory, seed, K, kind):
    rng = np.random.default_rng(seed)
    bank = MemoryBank(kind)
    for k in range(K):
        bank = update_memory(bank, random_entry(rng, k, kind))
    path = tmp_path_factory.mktemp("bank")
    save_bank(bank, path)
    back = load_bank(path)
    assert back.kind == bank.kind and len(back) == K
    assert all(a == b for a, b in zip(bank.entries, back.entries))


def test_truncated_blob_fails(tmp_path):
    bank = update_memory(MemoryBank(), entry(0))
    save_bank(bank, tmp_path)
    f = tmp_path / "entry_000.json"
    doc = json.loads(f.read_text())
    doc["features_b64"] = doc["features_b64"][:8]
    f.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_bank(tmp_path)


def test_truncated_entry_file_fails(tmp_path):
    bank = update_memory(MemoryBank(), entry(0))
    save_bank(bank, tmp_path)
    f = tmp_path / "entry_000.json"
    doc = json.loads(f.read_text())
    doc["features_b64"] = doc["features_b64"][:8]
    f.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_entry(f)


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        load_bank(tmp_path)
