"""Replay memory banks: condensed entries, sampled-node baselines and persistence."""

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import build_graph, induced_subgraph, normalize_adjacency, propagate
from .serialize import (FORMAT_VERSION, FormatError, decode_f32, encode_f32, file_digest,
                        read_json, require, write_json)

log = logging.getLogger(__name__)

BANK_KINDS = ("condensed", "random_nodes", "balanced_nodes", "sparsified_subgraph")


class BankError(ValueError):
    pass


def _bits_equal(a, b):
    return a.shape == b.shape and np.array_equal(
        np.ascontiguousarray(a, np.float32).view(np.uint32), np.ascontiguousarray(b, np.float32).view(np.uint32))


@dataclass(frozen=True, eq=False)
class CondensedGraph:
    """Edge-free synthetic replay graph."""

    task_id: int
    features: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)
    trace: tuple = field(default=(), repr=False)  # per-step matching loss, not persisted

    @property
    def budget(self) -> int:
        return self.labels.shape[0]

    edges = np.zeros((0, 2), np.int64)

    def rows(self, hops=1, self_loops=True):
        return self.features

    def __eq__(self, other):
        return (isinstance(other, CondensedGraph) and self.task_id == other.task_id
                and np.array_equal(self.labels, other.labels) and _bits_equal(self.features, other.features)
                and self.meta == other.meta)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SampledGraph:
    """Real nodes copied from an incoming graph, optionally with their kept edges."""

    task_id: int
    features: np.ndarray
    labels: np.ndarray
    node_ids: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    meta: dict = field(default_factory=dict)

    @property
    def budget(self) -> int:
        return self.labels.shape[0]

    def rows(self, hops=1, self_loops=True):
        if self.edges.shape[0] == 0:
            return self.features
        g = build_graph(self.features, self.edges, self.labels)
        return propagate(normalize_adjacency(g, self_loops), self.features, hops).F

    def __eq__(self, other):
        return (isinstance(other, SampledGraph) and self.task_id == other.task_id
                and np.array_equal(self.labels, other.labels) and np.array_equal(self.node_ids, other.node_ids)
                and np.array_equal(self.edges, other.edges) and _bits_equal(self.features, other.features)
                and self.meta == other.meta)

    __hash__ = None


@dataclass(frozen=True)
class MemoryBank:
    kind: str = "condensed"
    entries: tuple = ()

    def __post_init__(self):
        if self.kind not in BANK_KINDS:
            raise BankError(f"unknown bank kind {self.kind!r}")

    def __len__(self):
        return len(self.entries)

    @property
    def budgets(self) -> list:
        return [e.budget for e in self.entries]

    @property
    def classes(self) -> list:
        return sorted({int(c) for e in self.entries for c in e.labels})


def update_memory(bank: MemoryBank, entry) -> MemoryBank:
    if entry.task_id != len(bank):
        raise BankError(f"entry for task {entry.task_id} cannot follow a bank of {len(bank)} entries")
    return MemoryBank(bank.kind, bank.entries + (entry,))


def bank_rows(bank: MemoryBank, hops=1, self_loops=True):
    """Training view of the bank: pooled (rows, labels) over all entries."""
    if not bank.entries:
        raise BankError("memory bank is empty")
    X = np.concatenate([np.asarray(e.rows(hops, self_loops), np.float32) for e in bank.entries])
    y = np.concatenate([e.labels for e in bank.entries])
    return X, y


# -- sampling baselines -------------------------------------------------------

def _check_budgets(task, budgets):
    unknown = set(budgets) - set(task.classes)
    if unknown:
        raise BankError(f"budget for classes {sorted(unknown)} outside task {task.task_id}")
    if any(b < 0 for b in budgets.values()):
        raise BankError("negative class budget")


def pick_train_nodes(task, budgets, rng):
    """Per class (ascending id) draw ``budgets[c]`` train nodes uniformly, with replacement only if short."""
    _check_budgets(task, budgets)
    g = task.incoming
    picked, labels = [], []
    for c in sorted(budgets):
        pool = np.flatnonzero(g.train_mask & (g.labels == c))
        b = budgets[c]
        if pool.size == 0 and b:
            raise BankError(f"class {c} of task {task.task_id} has no train nodes")
        replace = b > pool.size
        if replace:
            log.info("class %d: budget %d exceeds %d train nodes, sampling with replacement", c, b, pool.size)
        picked.append(rng.choice(pool, size=b, replace=replace) if b else np.zeros(0, np.int64))
        labels.append(np.full(b, c, dtype=np.int64))
    return np.concatenate(picked).astype(np.int64), np.concatenate(labels)


def sample_random_nodes(task, budgets, seed) -> SampledGraph:
    nodes, y = pick_train_nodes(task, budgets, np.random.default_rng(seed))
    return SampledGraph(task.task_id, task.incoming.features[nodes].copy(), y, nodes,
                        meta={"selector": "random", "seed": int(seed)})


def sample_balanced_mean(task, budgets, feats=None) -> SampledGraph:
    """Per class, the train nodes nearest to the class mean of ``feats`` (ties by node id).

    ``feats`` defaults to the raw features; the runner passes propagated ones.
    """
    _check_budgets(task, budgets)
    g = task.incoming
    F = np.asarray(g.features if feats is None else feats, dtype=np.float64)
    picked, labels = [], []
    for c in sorted(budgets):
        pool = np.flatnonzero(g.train_mask & (g.labels == c))
        b = min(budgets[c], pool.size)
        if b < budgets[c]:
            log.info("class %d: only %d train nodes for budget %d", c, pool.size, budgets[c])
        d = ((F[pool] - F[pool].mean(axis=0)) ** 2).sum(axis=1)
        order = np.lexsort((pool, d))
        picked.append(pool[order[:b]])
        labels.append(np.full(b, c, dtype=np.int64))
    nodes = np.concatenate(picked).astype(np.int64)
    return SampledGraph(task.task_id, g.features[nodes].copy(), np.concatenate(labels), nodes,
                        meta={"selector": "mean_nearest"})


def sparsify_subgraph(task, budgets, edge_keep_ratio=0.5, seed=0) -> SampledGraph:
    if not 0.0 <= edge_keep_ratio <= 1.0:
        raise BankError("edge_keep_ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    nodes, y = pick_train_nodes(task, budgets, rng)
    uniq = np.unique(nodes)
    sub = induced_subgraph(task.incoming, uniq)
    e = sub.undirected_edges()
    e = e[rng.random(e.shape[0]) < edge_keep_ratio]
    # edges are re-indexed onto the (possibly repeated) sampled rows via their first occurrence
    first = {int(n): i for i, n in reversed(list(enumerate(nodes)))}
    e = np.array([[first[int(uniq[a])], first[int(uniq[b])]] for a, b in e], dtype=np.int64).reshape(-1, 2)
    return SampledGraph(task.task_id, task.incoming.features[nodes].copy(), y, nodes, e,
                        meta={"selector": "sparsified", "seed": int(seed), "edge_keep_ratio": edge_keep_ratio})


# -- persistence --------------------------------------------------------------

def entry_to_dict(entry) -> dict:
    doc = {
        "task_id": int(entry.task_id),
        "budget": entry.budget,
        "labels": entry.labels.tolist(),
        "feature_dim": int(entry.features.shape[1]),
        "features_b64": encode_f32(entry.features),
        "meta": entry.meta,
    }
    if isinstance(entry, CondensedGraph):
        doc["type"] = "condensed"
    else:
        doc.update(type="sampled", node_ids=entry.node_ids.tolist(), edges=entry.edges.tolist())
    return doc


def entry_from_dict(doc: dict):
    require(doc, "type", "task_id", "budget", "labels", "feature_dim", "features_b64", "meta", where="bank entry")
    labels = np.asarray(doc["labels"], dtype=np.int64)
    if labels.shape != (doc["budget"],):
        raise FormatError("bank entry: label count does not match budget")
    X = decode_f32(doc["features_b64"], (doc["budget"], doc["feature_dim"]))
    if doc["type"] == "condensed":
        return CondensedGraph(int(doc["task_id"]), X, labels, doc["meta"])
    if doc["type"] == "sampled":
        require(doc, "node_ids", "edges", where="sampled entry")
        edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
        return SampledGraph(int(doc["task_id"]), X, labels, np.asarray(doc["node_ids"], dtype=np.int64), edges,
                            doc["meta"])
    raise FormatError(f"bank entry: unknown type {doc['type']!r}")


def save_entry(entry, path):
    write_json(path, entry_to_dict(entry))


def load_entry(path):
    return entry_from_dict(read_json(path))


def save_bank(bank: MemoryBank, path, extra=None):
    """Write ``path/entry_XXX.json`` files plus a manifest carrying their hashes."""
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    files = []
    for i, e in enumerate(bank.entries):
        name = f"entry_{i:03d}.json"
        save_entry(e, path / name)
        files.append({"file": name, "sha256": file_digest(path / name), "budget": e.budget})
    write_json(path / "manifest.json", {
        "format": "pumacgl.bank",
        "version": FORMAT_VERSION,
        "kind": bank.kind,
        "budgets": bank.budgets,
        "entries": files,
        "extra": extra or {},
    })


def load_bank(path) -> MemoryBank:
    path = Path(path)
    try:
        man = read_json(path / "manifest.json")
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no bank manifest") from exc
    require(man, "kind", "entries", "version", where="bank manifest")
    if man["version"] != FORMAT_VERSION:
        raise FormatError(f"bank format version {man['version']} is not supported")
    entries = []
    for i, item in enumerate(man["entries"]):
        f = path / item["file"]
        if not f.exists() or file_digest(f) != item["sha256"]:
            raise FormatError(f"bank entry {item['file']} is missing or corrupt")
        e = load_entry(f)
        if e.task_id != i:
            raise FormatError(f"bank entry {item['file']} carries task id {e.task_id}, expected {i}")
        entries.append(e)
    try:
        return MemoryBank(man["kind"], tuple(entries))
    except BankError as exc:
        raise FormatError(str(exc)) from exc
