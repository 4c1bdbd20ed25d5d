"""Sparse attributed graphs, symmetric normalization and feature propagation."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .serialize import FormatError, decode_f32, encode_f32, read_json, require, write_json

UNLABELLED = -1


class GraphStructureError(ValueError):
    pass


class GraphValidationError(ValueError):
    pass


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    ``edges`` holds both directions of every undirected edge as an (2m, 2) array
    sorted lexicographically. ``labels`` uses -1 for unlabelled nodes.
    """

    features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return self.edges.shape[0] // 2

    def undirected_edges(self) -> np.ndarray:
        e = self.edges
        return e[e[:, 0] < e[:, 1]]

    def classes(self) -> list:
        return sorted(int(c) for c in np.unique(self.labels) if c != UNLABELLED)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("edges", "labels", "train_mask", "val_mask", "test_mask")
        ) and self.features.shape == other.features.shape and np.array_equal(
            self.features.view(np.uint32), other.features.view(np.uint32)
        )

    __hash__ = None


def build_graph(features, edges=(), labels=None, train=None, val=None, test=None) -> Graph:
    """Validate raw inputs and return a symmetrized, deduplicated Graph.

    ``train``/``val``/``test`` accept boolean vectors or arrays of node ids.
    Self-loop pairs are dropped; normalization adds them back on request.
    """
    X = np.array(features, dtype=np.float32)
    if X.ndim != 2 or X.shape[0] == 0:
        raise GraphStructureError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
    n = X.shape[0]

    E = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if E.size and (E.min() < 0 or E.max() >= n):
        bad = E[(E < 0).any(axis=1) | (E >= n).any(axis=1)][0]
        raise GraphStructureError(f"edge ({bad[0]}, {bad[1]}) references a node outside 0..{n - 1}")
    E = E[E[:, 0] != E[:, 1]]
    E = np.unique(np.concatenate([E, E[:, ::-1]]), axis=0) if E.size else np.zeros((0, 2), np.int64)

    if labels is None:
        y = np.full(n, UNLABELLED, dtype=np.int64)
    else:
        y = np.array([UNLABELLED if v is None else v for v in labels], dtype=np.int64)
        if y.shape != (n,):
            raise GraphValidationError(f"expected {n} labels, got {y.shape[0]}")
        if (y < UNLABELLED).any():
            raise GraphValidationError("class ids must be non-negative")

    masks = [_as_mask(m, n, name) for m, name in ((train, "train"), (val, "val"), (test, "test"))]
    for i, j in ((0, 1), (0, 2), (1, 2)):
        if (masks[i] & masks[j]).any():
            raise GraphValidationError("train/val/test masks overlap")
    if (y[masks[0]] == UNLABELLED).any():
        raise GraphValidationError("every train node needs a label")

    return Graph(_frozen(X), _frozen(E), _frozen(y), *(_frozen(m) for m in masks))


def _as_mask(m, n, name):
    if m is None:
        return np.zeros(n, dtype=bool)
    m = np.asarray(m)
    if m.dtype == bool:
        if m.shape != (n,):
            raise GraphValidationError(f"{name} mask has shape {m.shape}, expected ({n},)")
        return m.copy()
    ids = m.astype(np.int64).ravel()
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise GraphStructureError(f"{name} mask references a node outside 0..{n - 1}")
    out = np.zeros(n, dtype=bool)
    out[ids] = True
    return out


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    matrix: sp.csr_matrix
    self_loops: bool

    def toarray(self):
        return self.matrix.toarray()


@dataclass(frozen=True, eq=False)
class PropagatedFeatures:
    F: np.ndarray
    hops: int


def normalize_adjacency(g: Graph, add_self_loops: bool = True) -> NormalizedAdjacency:
    n = g.num_nodes
    rows, cols = g.edges[:, 0], g.edges[:, 1]
    if add_self_loops:
        loop = np.arange(n, dtype=np.int64)
        rows = np.concatenate([rows, loop])
        cols = np.concatenate([cols, loop])
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    # one rounding per entry; deg[u] * deg[v] commutes, so (u, v) and (v, u) match bit for bit
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    L.sort_indices()
    return NormalizedAdjacency(L, add_self_loops)


def propagate(L: NormalizedAdjacency, X, hops: int = 1) -> PropagatedFeatures:
    """F = L^hops X, one sparse-dense product per hop, rounded to float32 after each."""
    X = np.asarray(X, dtype=np.float32)
    if hops < 0:
        raise ValueError("hops must be non-negative")
    if X.ndim != 2 or X.shape[0] != L.matrix.shape[1]:
        raise ValueError(f"cannot propagate features of shape {X.shape} over {L.matrix.shape[0]} nodes")
    F = X.copy()
    for _ in range(hops):
        F = np.asarray(L.matrix @ F.astype(np.float64), dtype=np.float32)
    return PropagatedFeatures(_frozen(F), hops)


def induced_subgraph(g: Graph, nodes) -> Graph:
    """Keep ``nodes`` (in the given order, renumbered 0..len-1) and their mutual edges."""
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    if nodes.size == 0:
        raise GraphValidationError("node set is empty")
    if nodes.min() < 0 or nodes.max() >= g.num_nodes:
        raise GraphStructureError("node set references nodes outside the graph")
    if np.unique(nodes).size != nodes.size:
        raise GraphValidationError("node set contains duplicates")
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[nodes] = np.arange(nodes.size)
    e = remap[g.undirected_edges()]
    e = e[(e >= 0).all(axis=1)]
    return build_graph(
        g.features[nodes], e, g.labels[nodes],
        g.train_mask[nodes], g.val_mask[nodes], g.test_mask[nodes],
    )


def with_labels_and_masks(g: Graph, labels, train, val, test) -> Graph:
    return build_graph(g.features, g.undirected_edges(), labels, train, val, test)


# -- file format --------------------------------------------------------------

def graph_to_dict(g: Graph) -> dict:
    return {
        "num_nodes": g.num_nodes,
        "feature_dim": g.feature_dim,
        "features_b64": encode_f32(g.features),
        "edges": g.undirected_edges().tolist(),
        "labels": [None if v == UNLABELLED else int(v) for v in g.labels],
        "masks": {
            "train": np.flatnonzero(g.train_mask).tolist(),
            "val": np.flatnonzero(g.val_mask).tolist(),
            "test": np.flatnonzero(g.test_mask).tolist(),
        },
    }


def graph_from_dict(doc: dict) -> Graph:
    require(doc, "num_nodes", "feature_dim", "features_b64", "edges", "labels", "masks", where="graph")
    require(doc["masks"], "train", "val", "test", where="graph.masks")
    X = decode_f32(doc["features_b64"], (doc["num_nodes"], doc["feature_dim"]))
    try:
        return build_graph(X, doc["edges"], doc["labels"], **{k: doc["masks"][k] for k in ("train", "val", "test")})
    except (GraphStructureError, GraphValidationError) as exc:
        raise FormatError(f"graph: {exc}") from exc


def save_graph(g: Graph, path):
    write_json(path, graph_to_dict(g))


def load_graph(path) -> Graph:
    return graph_from_dict(read_json(path))
