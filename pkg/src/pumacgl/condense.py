"""Edge-free graph condensation by distribution matching, with pseudo-label enlargement.

The incoming graph is propagated once (F = L^p X). Every random encoder then maps
both F and the synthetic rows through the same single layer, and the synthetic
rows move to match class-weighted mean embeddings.
"""

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import nn
from .fit import TrainConfig, fresh_params, head_index, train_mlp
from .graph import normalize_adjacency, propagate
from .memory import CondensedGraph, MemoryBank, bank_rows, pick_train_nodes

log = logging.getLogger(__name__)


class CondensationError(FloatingPointError):
    pass


@dataclass(frozen=True)
class CondenseConfig:
    encoder_dim: int = 4096
    encoders_phase1: int = 1
    encoders_phase2: int = 1
    iters_per_encoder: int = 500
    feature_lr: float = 0.001
    activation: bool = True
    init: str = "sample"
    label_alloc: str = "proportional"
    pseudo_label: bool = True
    pl_threshold: float = 0.8
    warm_start: bool = True
    hops: int = 1
    self_loops: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.encoder_dim, self.encoders_phase1, self.encoders_phase2, self.iters_per_encoder) < 1:
            raise ValueError("encoder counts, width and iterations must be >= 1")
        if not 0.0 <= self.pl_threshold <= 1.0:
            raise ValueError("pl_threshold must lie in [0, 1]")
        if self.init not in ("sample", "noise"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.label_alloc not in ("proportional", "balanced"):
            raise ValueError(f"unknown label_alloc {self.label_alloc!r}")

    @classmethod
    def high_dim(cls, **kw):
        """Preset for high-dimensional features: 50 encoders x 100 iterations per phase."""
        return cls(**{"encoders_phase1": 50, "encoders_phase2": 50, "iters_per_encoder": 100, **kw})


def allocate_budget(class_counts: dict, budget: int, strategy="proportional") -> dict:
    """Split ``budget`` synthetic nodes over classes (every class gets at least one)."""
    classes = sorted(class_counts)
    C = len(classes)
    if budget < C:
        raise ValueError(f"budget {budget} is smaller than the {C} classes present")
    if strategy == "balanced":
        base, extra = divmod(budget, C)
        return {c: base + (i < extra) for i, c in enumerate(classes)}
    if strategy != "proportional":
        raise ValueError(f"unknown strategy {strategy!r}")

    counts = np.array([class_counts[c] for c in classes], dtype=np.float64)
    quota = budget * counts / counts.sum()
    alloc = np.maximum(np.floor(quota).astype(np.int64), 1)
    # largest remainder first, ties to the smaller class id
    while alloc.sum() < budget:
        i = min(range(C), key=lambda j: (-(quota[j] - alloc[j]), classes[j]))
        alloc[i] += 1
    while alloc.sum() > budget:
        i = min((j for j in range(C) if alloc[j] > 1), key=lambda j: (quota[j] - alloc[j], -classes[j]))
        alloc[i] -= 1
    return {c: int(a) for c, a in zip(classes, alloc)}


def init_condensed(task, budgets: dict, init="sample", seed=0, rows=None) -> CondensedGraph:
    """Starting rows for condensation.

    ``sample`` copies the rows of uniformly drawn same-class train nodes from
    ``rows`` (node-aligned, defaults to the raw features); ``noise`` draws
    standard normal entries.
    """
    rng = np.random.default_rng(seed)
    if init == "sample":
        nodes, y = pick_train_nodes(task, budgets, rng)
        src = task.incoming.features if rows is None else rows
        X = np.asarray(src[nodes], dtype=np.float32).copy()
    elif init == "noise":
        y = np.concatenate([np.full(budgets[c], c, dtype=np.int64) for c in sorted(budgets)])
        X = rng.standard_normal((y.size, task.incoming.feature_dim)).astype(np.float32)
    else:
        raise ValueError(f"unknown init {init!r}")
    return CondensedGraph(task.task_id, X, y, {"init": init, "seed": int(seed)})


def mmd_loss(orig, synth, counts=None):
    """Class-weighted squared distance between mean embeddings.

    ``orig`` and ``synth`` map class -> embedding rows. ``counts`` gives the
    class weights' numerators (defaults to the number of original rows), so
    callers may pass precomputed means as single rows.
    Returns (loss, {class: gradient w.r.t. that class's synthetic rows}).
    """
    missing = set(orig) - set(synth)
    if missing:
        raise ValueError(f"classes {sorted(missing)} have no synthetic rows")
    if counts is None:
        counts = {c: len(orig[c]) for c in orig}
    n = float(sum(counts[c] for c in orig))
    loss, grads = 0.0, {}
    for c in sorted(orig):
        S = np.asarray(synth[c], dtype=np.float64)
        if S.shape[0] == 0:
            raise ValueError(f"class {c} has no synthetic rows")
        diff = S.mean(axis=0) - np.asarray(orig[c], dtype=np.float64).mean(axis=0)
        w = counts[c] / n
        loss += w * float(diff @ diff)
        grads[c] = np.broadcast_to(w * 2.0 * diff / S.shape[0], S.shape).copy()
    return loss, grads


def propagated_features(task, cfg: CondenseConfig):
    """The one graph aggregation of a condensation run."""
    L = normalize_adjacency(task.incoming, cfg.self_loops)
    return propagate(L, task.incoming.features, cfg.hops)


def encoder_seed(cfg: CondenseConfig, task_id, phase, index) -> int:
    return nn.derive_seed(cfg.seed, task_id, phase, index)


def condense_dm(task, targets, cfg: CondenseConfig, feats, start: CondensedGraph, n_encoders=None,
                phase=1) -> CondensedGraph:
    """Move ``start``'s rows to match ``targets`` under ``n_encoders`` random encoders.

    ``targets`` is (node ids, labels) into the incoming graph; ``feats`` the
    propagated features of that graph, computed once by the caller.
    """
    nodes, y = (np.asarray(a, dtype=np.int64) for a in targets)
    F = np.asarray(feats.F if hasattr(feats, "F") else feats, dtype=np.float64)
    X = start.features.astype(np.float32).copy()
    labels = start.labels
    classes = sorted(set(int(c) for c in labels))
    target_classes = set(int(c) for c in y)
    if target_classes != set(classes):
        raise ValueError(f"target classes {sorted(target_classes)} differ from synthetic classes {classes}")
    rows = {c: np.flatnonzero(labels == c) for c in classes}
    members = {c: nodes[y == c] for c in classes}
    counts = {c: members[c].size for c in classes}
    act = "relu" if cfg.activation else "none"
    n_encoders = cfg.encoders_phase1 if n_encoders is None else n_encoders

    trace = []
    for m in range(n_encoders):
        seed = encoder_seed(cfg, task.task_id, phase, m)
        enc = nn.init_params([F.shape[1], cfg.encoder_dim], act, seed)
        # original embeddings are fixed under a fixed encoder: encode once per encoder
        orig_means = {c: nn.forward(enc, F[members[c]], act_last=True).mean(axis=0, keepdims=True)
                      for c in classes}
        opt = nn.OptimizerState("adam", cfg.feature_lr)
        for _ in range(cfg.iters_per_encoder):
            cache = []
            E = nn.forward(enc, X, act_last=True, cache=cache)
            loss, g = mmd_loss(orig_means, {c: E[rows[c]] for c in classes}, counts)
            if not np.isfinite(loss):
                raise CondensationError(f"non-finite matching loss under encoder seed {seed}")
            trace.append(loss)
            up = np.zeros_like(E)
            for c in classes:
                up[rows[c]] = g[c]
            dX = nn.backward(enc, X, up, act_last=True, cache=cache).dX
            try:
                X = nn.opt_step(opt, X, dX)
            except FloatingPointError as exc:
                raise CondensationError(f"{exc} (encoder seed {seed})") from exc
    meta = dict(start.meta, encoders=start.meta.get("encoders", 0) + n_encoders)
    return CondensedGraph(task.task_id, X, labels.copy(), meta, tuple(start.trace) + tuple(trace))


@dataclass(frozen=True, eq=False)
class PseudoLabelResult:
    nodes: np.ndarray  # candidate node ids in the incoming graph
    labels: np.ndarray
    confidence: np.ndarray
    accept: np.ndarray
    params: nn.ModelParams
    classes: tuple

    @property
    def accepted(self):
        return self.nodes[self.accept], self.labels[self.accept]


def pseudo_label(task, bank: MemoryBank, fresh: CondensedGraph, threshold, train_cfg: TrainConfig,
                 feats) -> PseudoLabelResult:
    """Label the non-train nodes of the incoming graph with a classifier fitted on bank + fresh rows."""
    parts_X, parts_y = [], []
    if len(bank):
        bx, by = bank_rows(bank, train_cfg.hops, train_cfg.self_loops)
        parts_X.append(bx)
        parts_y.append(by)
    parts_X.append(fresh.features)
    parts_y.append(fresh.labels)
    X = np.concatenate(parts_X)
    y = np.concatenate(parts_y)
    classes = tuple(sorted(set(int(c) for c in y)))
    params = fresh_params(X.shape[1], len(classes), train_cfg, nn.derive_seed(train_cfg.seed, task.task_id, 7))
    params, _ = train_mlp(X, head_index(classes, y), params, train_cfg)

    g = task.incoming
    cand = np.flatnonzero(~g.train_mask)
    F = feats.F if hasattr(feats, "F") else feats
    probs = nn.softmax(nn.forward(params, np.asarray(F)[cand]))
    pred, conf, accept = confident_labels(probs, classes, task.classes, threshold)
    return PseudoLabelResult(cand, pred, conf, accept, params, classes)


def confident_labels(probs, classes, allowed, threshold):
    """Predicted class, confidence (max probability) and the acceptance mask.

    A prediction is kept when its confidence reaches ``threshold`` and the class
    belongs to ``allowed``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    conf = probs.max(axis=1)
    pred = np.asarray(classes, dtype=np.int64)[probs.argmax(axis=1)]
    return pred, conf, (conf >= threshold) & np.isin(pred, list(allowed))


def condense_puma(task, bank: MemoryBank, cfg: CondenseConfig, budget: int, train_cfg: TrainConfig = None,
                  feats=None) -> CondensedGraph:
    """Two-phase condensation: match train nodes, pseudo-label the rest, match the enlarged set.

    With ``cfg.pseudo_label`` off this is the single-phase (CaT) condensation.
    Phase 2 is skipped when no pseudo label clears the threshold.
    """
    g = task.incoming
    if feats is None:
        feats = propagated_features(task, cfg)
    train = np.flatnonzero(g.train_mask)
    targets = (train, g.labels[train])
    counts = {c: int((g.labels[train] == c).sum()) for c in task.classes if (g.labels[train] == c).any()}
    budgets = allocate_budget(counts, budget, cfg.label_alloc)

    # synthetic rows are matched against, and trained as, propagated rows, so they start there too
    start = init_condensed(task, budgets, cfg.init, nn.derive_seed(cfg.seed, task.task_id, 0),
                           rows=feats.F if hasattr(feats, "F") else feats)
    cond = condense_dm(task, targets, cfg, feats, start, cfg.encoders_phase1, phase=1)
    cond = replace(cond, meta=dict(cond.meta, budgets={str(c): b for c, b in budgets.items()}, pseudo_labels=0))
    if not cfg.pseudo_label:
        return cond

    pl = pseudo_label(task, bank, cond, cfg.pl_threshold, train_cfg or TrainConfig(), feats)
    pl_nodes, pl_labels = pl.accepted
    log.info("task %d: %d of %d pseudo labels accepted", task.task_id, pl_nodes.size, pl.nodes.size)
    if pl_nodes.size == 0:
        return cond
    targets = (np.concatenate([train, pl_nodes]), np.concatenate([g.labels[train], pl_labels]))
    base = cond if cfg.warm_start else replace(start, meta=cond.meta)
    out = condense_dm(task, targets, cfg, feats, base, cfg.encoders_phase2, phase=2)
    return replace(out, meta=dict(out.meta, pseudo_labels=int(pl_nodes.size)))


def config_dict(cfg: CondenseConfig) -> dict:
    return asdict(cfg)
