"""Continual training over a task stream.

Replay kinds train only on the memory bank (TiM) and, with ``retrain``, reset the
classifier before every task. ``finetune`` and ``joint`` are the lower and upper
reference points.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .condense import CondenseConfig, allocate_budget, condense_puma, propagated_features
from .fit import TrainConfig, fresh_params, grow_head, head_index, train_mlp
from .graph import normalize_adjacency, propagate
from .memory import (MemoryBank, bank_rows, sample_balanced_mean, sample_random_nodes,
                     sparsify_subgraph, update_memory)
from .metrics import PerformanceMatrix, accuracy

log = logging.getLogger(__name__)

BANK_CHOICES = ("puma", "cat", "random", "balanced", "sparsified", "finetune", "joint")
MODES = ("class_il", "task_il")

_STORAGE = {
    "puma": "condensed",
    "cat": "condensed",
    "random": "random_nodes",
    "balanced": "balanced_nodes",
    "sparsified": "sparsified_subgraph",
}


@dataclass
class ContinualState:
    params: nn.ModelParams = None
    bank: MemoryBank = field(default_factory=MemoryBank)
    classes: list = field(default_factory=list)  # head row order
    loss_curves: list = field(default_factory=list)
    matrices: dict = field(default_factory=dict)

    @property
    def tasks_done(self) -> int:
        return len(self.loss_curves)


def task_budget(stream, ratio, k) -> int:
    """Per-task replay budget: the global ratio of all train nodes, split evenly over tasks."""
    per_task = int(np.floor(ratio * stream.total_train / len(stream)))
    return max(len(stream[k].classes), per_task)


def task_features(task, cfg: TrainConfig) -> np.ndarray:
    return propagate(normalize_adjacency(task.incoming, cfg.self_loops), task.incoming.features, cfg.hops).F


def _init_for_task(state, in_dim, cfg, task_id, retrain):
    n = len(state.classes)
    seed = nn.derive_seed(cfg.seed, task_id)
    if retrain or state.params is None:
        return fresh_params(in_dim, n, cfg, seed)
    return grow_head(state.params, n, nn.derive_seed(cfg.seed, task_id, 1))


def _fit_rows(state, X, y, cfg, task_id, retrain):
    params = _init_for_task(state, X.shape[1], cfg, task_id, retrain)
    return train_mlp(X, head_index(state.classes, y), params, cfg)


def fit_on_memory(state: ContinualState, cfg: TrainConfig, task_id: int):
    """Train on the pooled bank rows only. Returns (params, loss curve)."""
    X, y = bank_rows(state.bank, cfg.hops, cfg.self_loops)
    return _fit_rows(state, X, y, cfg, task_id, cfg.retrain)


def fit_pooled(state, task, feats, cfg, task_id):
    """Non-TiM path: the incoming graph's train rows plus the previous bank, one uniform loss."""
    tr = task.train_nodes
    parts = [(np.asarray(feats)[tr], task.incoming.labels[tr])]
    if len(state.bank) > 0:
        parts.append(bank_rows(state.bank, cfg.hops, cfg.self_loops))
    X = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    return _fit_rows(state, X, y, cfg, task_id, cfg.retrain)


def fit_finetune(state, task, feats, cfg, task_id):
    """Keep training the current model on the incoming train rows; the bank is never read."""
    tr = task.train_nodes
    return _fit_rows(state, np.asarray(feats)[tr], task.incoming.labels[tr], cfg, task_id, retrain=False)


def fit_joint(tasks, feats, cfg, classes, task_id):
    """Train from scratch on every train row of ``tasks``."""
    X = np.concatenate([np.asarray(f)[t.train_nodes] for t, f in zip(tasks, feats)])
    y = np.concatenate([t.incoming.labels[t.train_nodes] for t in tasks])
    params = fresh_params(X.shape[1], len(classes), cfg, nn.derive_seed(cfg.seed, task_id))
    return train_mlp(X, head_index(classes, y), params, cfg)


def select_classes(logits, classes, allowed=None) -> np.ndarray:
    """Argmax over head columns, restricted to ``allowed`` class ids; ties go to the lowest id."""
    z = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    if allowed is not None:
        unknown = set(int(c) for c in allowed) - set(classes.tolist())
        if unknown:
            raise ValueError(f"classes {sorted(unknown)} are not in the model head")
        z = np.where(np.isin(classes, list(allowed)), z, -np.inf)
    best = z.max(axis=1, keepdims=True)
    ids = np.where(z == best, classes, np.iinfo(np.int64).max)
    return ids.min(axis=1)


def predict(params, classes, feats, mode="class_il", task_classes=None) -> np.ndarray:
    """Predicted class ids for the rows of ``feats`` (already propagated)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "task_il" and task_classes is None:
        raise ValueError("task-IL prediction needs the task's classes")
    logits = nn.forward(params, feats)
    return select_classes(logits, classes, task_classes if mode == "task_il" else None)


def evaluate(state, stream, feats, k, eval_mask="test"):
    """Accuracy on every task <= k, per mode."""
    out = {}
    for mode in MODES:
        row = []
        for j in range(k + 1):
            t = stream[j]
            g = t.incoming
            mask = getattr(g, f"{eval_mask}_mask")
            pred = predict(state.params, state.classes, feats[j], mode, t.classes)
            row.append(accuracy(pred, g.labels, mask))
        out[mode] = row
    return out


def build_entry(kind, task, bank, budget, ccfg: CondenseConfig, tcfg: TrainConfig, edge_keep_ratio=0.5):
    if kind in ("puma", "cat"):
        cfg = ccfg if kind == "puma" else replace(ccfg, pseudo_label=False)
        return condense_puma(task, bank, cfg, budget, tcfg)
    g = task.incoming
    train_labels = g.labels[task.train_nodes]
    counts = {c: int((train_labels == c).sum()) for c in task.classes if (train_labels == c).any()}
    budgets = allocate_budget(counts, budget, ccfg.label_alloc)
    seed = nn.derive_seed(ccfg.seed, task.task_id, 11)
    if kind == "random":
        return sample_random_nodes(task, budgets, seed)
    if kind == "balanced":
        return sample_balanced_mean(task, budgets, propagated_features(task, ccfg).F)
    if kind == "sparsified":
        return sparsify_subgraph(task, budgets, edge_keep_ratio, seed)
    raise ValueError(f"{kind!r} does not build replay entries")


def run_continual(stream, bank_kind="puma", cfg: TrainConfig = None, condense_cfg: CondenseConfig = None,
                  budget_ratio=0.005, mode="class_il", state: ContinualState = None, on_task_end=None,
                  edge_keep_ratio=0.5):
    """Run the protocol over ``stream`` and return (state, performance matrix for ``mode``).

    ``state`` resumes a partially completed run; ``on_task_end(state, k)`` fires
    after row k of the matrices is written.
    """
    if bank_kind not in BANK_CHOICES:
        raise ValueError(f"unknown bank kind {bank_kind!r}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    cfg = cfg or TrainConfig()
    condense_cfg = condense_cfg or CondenseConfig()
    K = len(stream)
    if state is None:
        state = ContinualState(bank=MemoryBank(_STORAGE.get(bank_kind, "condensed")))
    for m in MODES:
        state.matrices.setdefault(m, PerformanceMatrix.empty(K))
    feats = [task_features(t, cfg) for t in stream]

    for k in range(state.tasks_done, K):
        task = stream[k]
        for c in task.classes:
            if c not in state.classes:
                state.classes.append(int(c))

        if bank_kind == "finetune":
            params, curve = fit_finetune(state, task, feats[k], cfg, k)
        elif bank_kind == "joint":
            params, curve = fit_joint(stream.tasks[: k + 1], feats[: k + 1], cfg, state.classes, k)
        else:
            entry = build_entry(bank_kind, task, state.bank, task_budget(stream, budget_ratio, k),
                                condense_cfg, cfg, edge_keep_ratio)
            if cfg.tim:
                state.bank = update_memory(state.bank, entry)
                params, curve = fit_on_memory(state, cfg, k)
            else:
                params, curve = fit_pooled(state, task, feats[k], cfg, k)
                state.bank = update_memory(state.bank, entry)
        if not np.isfinite(curve[-1]):
            raise FloatingPointError(f"task {k}: training diverged")
        state.params = params
        state.loss_curves.append(curve)
        for m, row in evaluate(state, stream, feats, k).items():
            state.matrices[m].set_row(k, row)
        log.info("task %d/%d done: class-IL AP %.3f", k + 1, K, float(np.mean(state.matrices["class_il"].values[k, : k + 1])))
        if on_task_end is not None:
            on_task_end(state, k)
    return state, state.matrices[mode]
