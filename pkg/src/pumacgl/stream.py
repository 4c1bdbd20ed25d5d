"""Class-incremental task streams and a stochastic-block-model generator."""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .graph import UNLABELLED, Graph, build_graph, induced_subgraph, with_labels_and_masks
from .serialize import FormatError, read_json, require, write_json

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    task_id: int
    classes: tuple
    incoming: Graph
    node_ids: np.ndarray  # source-graph id of every incoming node

    @property
    def train_nodes(self):
        return np.flatnonzero(self.incoming.train_mask)


@dataclass(frozen=True, eq=False)
class TaskStream:
    tasks: tuple
    class_order: tuple
    seed: int

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, k):
        return self.tasks[k]

    @property
    def total_train(self) -> int:
        return sum(int(t.incoming.train_mask.sum()) for t in self.tasks)


@dataclass(frozen=True)
class SbmConfig:
    classes: int = 10
    nodes_per_class: int = 200
    feature_dim: int = 32
    intra_p: float = 0.1
    inter_p: float = 0.01
    class_mean_scale: float = 0.05
    noise_std: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if min(self.classes, self.nodes_per_class, self.feature_dim) <= 0:
            raise ValueError("classes, nodes_per_class and feature_dim must be positive")
        if not 0.0 <= self.inter_p <= self.intra_p <= 1.0:
            raise ValueError("need 0 <= inter_p <= intra_p <= 1")
        if self.noise_std < 0 or self.class_mean_scale < 0:
            raise ValueError("scales must be non-negative")


def generate_sbm(cfg: SbmConfig) -> Graph:
    rng = np.random.default_rng(cfg.seed)
    C, m = cfg.classes, cfg.nodes_per_class
    y = np.repeat(np.arange(C), m)
    centers = rng.normal(0.0, cfg.class_mean_scale, size=(C, cfg.feature_dim))
    X = centers[y] + rng.normal(0.0, 1.0, size=(C * m, cfg.feature_dim)) * cfg.noise_std

    edges = []
    for a in range(C):
        for b in range(a, C):
            p = cfg.intra_p if a == b else cfg.inter_p
            draw = rng.random((m, m)) < p
            if a == b:
                draw = np.triu(draw, 1)
            u, v = np.nonzero(draw)
            edges.append(np.stack([u + a * m, v + b * m], axis=1))
    E = np.concatenate(edges) if edges else np.zeros((0, 2), np.int64)
    return build_graph(X, E, y)


def _split_counts(n, ratios):
    n_train = max(1, int(np.floor(ratios[0] * n + 0.5)))
    n_val = min(n - n_train, int(np.floor(ratios[1] * n + 0.5)))
    return n_train, n_val, n - n_train - n_val


def split_stream(g: Graph, classes_per_task=2, ratios=(0.6, 0.2, 0.2), seed=0,
                 unlabelled_ratio=0.0, shuffle_classes=False) -> TaskStream:
    """Group classes into tasks and build one induced incoming graph per task.

    Within every class a seeded shuffle assigns ``unlabelled_ratio`` of the nodes
    to an unlabelled pool (label hidden, no mask), and splits the rest by ``ratios``.
    """
    classes = g.classes()
    if len(classes) < classes_per_task:
        raise ValueError(f"graph has {len(classes)} classes, fewer than {classes_per_task} per task")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(classes)) if shuffle_classes else classes
    order = [int(c) for c in order]
    n_tasks = len(order) // classes_per_task
    if len(order) % classes_per_task:
        log.info("dropping remainder classes %s", order[n_tasks * classes_per_task:])

    tasks = []
    for k in range(n_tasks):
        cls = tuple(order[k * classes_per_task:(k + 1) * classes_per_task])
        node_ids = np.flatnonzero(np.isin(g.labels, cls))
        sub = induced_subgraph(g, node_ids)
        y = sub.labels.copy()
        masks = [np.zeros(sub.num_nodes, dtype=bool) for _ in range(3)]
        for c in cls:
            members = np.flatnonzero(y == c)
            members = members[rng.permutation(members.size)]
            if members.size < 5:
                log.warning("class %d has only %d nodes", c, members.size)
            n_hidden = min(members.size - 1, int(np.floor(unlabelled_ratio * members.size)))
            y[members[:n_hidden]] = UNLABELLED
            rest = members[n_hidden:]
            start = 0
            for mask, count in zip(masks, _split_counts(rest.size, ratios)):
                mask[rest[start:start + count]] = True
                start += count
        tasks.append(TaskSpec(k, cls, with_labels_and_masks(sub, y, *masks), node_ids))
    return TaskStream(tuple(tasks), tuple(order), int(seed))


# -- stream manifest ----------------------------------------------------------

def stream_to_dict(stream: TaskStream, params: dict = None) -> dict:
    return {
        "format": "pumacgl.stream",
        "version": 1,
        "seed": stream.seed,
        "class_order": list(stream.class_order),
        "params": params or {},
        "tasks": [
            {
                "task_id": t.task_id,
                "classes": list(t.classes),
                "node_ids": t.node_ids.tolist(),
                "unlabelled": np.flatnonzero(t.incoming.labels == UNLABELLED).tolist(),
                "train": np.flatnonzero(t.incoming.train_mask).tolist(),
                "val": np.flatnonzero(t.incoming.val_mask).tolist(),
                "test": np.flatnonzero(t.incoming.test_mask).tolist(),
            }
            for t in stream.tasks
        ],
    }


def stream_from_dict(doc: dict, g: Graph) -> TaskStream:
    """Rebuild a stream from its manifest and the source graph."""
    require(doc, "seed", "class_order", "tasks", where="stream manifest")
    tasks = []
    for entry in doc["tasks"]:
        require(entry, "task_id", "classes", "node_ids", "unlabelled", "train", "val", "test", where="stream task")
        try:
            sub = induced_subgraph(g, entry["node_ids"])
        except ValueError as exc:
            raise FormatError(f"stream task {entry['task_id']}: {exc}") from exc
        y = sub.labels.copy()
        y[np.asarray(entry["unlabelled"], dtype=np.int64)] = UNLABELLED
        inc = with_labels_and_masks(sub, y, entry["train"], entry["val"], entry["test"])
        tasks.append(TaskSpec(int(entry["task_id"]), tuple(entry["classes"]), inc,
                              np.asarray(entry["node_ids"], dtype=np.int64)))
    return TaskStream(tuple(tasks), tuple(doc["class_order"]), int(doc["seed"]))


def save_stream(stream: TaskStream, path, params=None):
    write_json(path, stream_to_dict(stream, params))


def load_stream(path, g: Graph) -> TaskStream:
    return stream_from_dict(read_json(path), g)


def sbm_config_dict(cfg: SbmConfig) -> dict:
    return asdict(cfg)
