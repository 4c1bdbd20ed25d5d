"""Full-batch classifier training shared by the trainer and pseudo-labelling."""

from dataclasses import dataclass

import numpy as np

from . import nn


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (512, 512)
    epochs: int = 500
    lr: float = 0.001
    optimizer: str = "adam"
    activation: str = "relu"
    retrain: bool = True
    tim: bool = True
    hops: int = 1
    self_loops: bool = True
    patience: int = 20
    min_delta: float = 1e-4
    precision: str = "float32"  # GEMM precision of classifier training
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if not self.hidden or min(self.hidden) <= 0:
            raise ValueError("hidden dims must be non-empty and positive")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if self.hops < 0 or self.patience <= 0:
            raise ValueError("hops must be >= 0 and patience > 0")


def head_index(classes, labels) -> np.ndarray:
    """Map global class ids to output-head rows (position in ``classes``)."""
    lut = {int(c): i for i, c in enumerate(classes)}
    try:
        return np.array([lut[int(c)] for c in labels], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} is not in the head's class list") from None


def fresh_params(in_dim, n_classes, cfg: TrainConfig, seed) -> nn.ModelParams:
    return nn.init_params([in_dim, *cfg.hidden, n_classes], cfg.activation, seed)


def grow_head(params: nn.ModelParams, n_classes, seed) -> nn.ModelParams:
    """Copy existing output rows and append freshly initialized rows for new classes."""
    W, b = params.layers[-1]
    old = W.shape[0]
    if n_classes < old:
        raise ValueError("the output head never shrinks")
    if n_classes == old:
        return params.copy()
    extra = nn.init_params([W.shape[1], n_classes - old], params.activation, seed).layers[0]
    out = params.copy()
    out.layers[-1] = (np.concatenate([W, extra[0]]), np.concatenate([b, extra[1]]))
    return out


def train_mlp(X, targets, params: nn.ModelParams, cfg: TrainConfig):
    """Full-batch cross-entropy training until the loss plateaus.

    ``targets`` are head indices. Stops after ``cfg.epochs`` or once the loss has
    not improved by more than ``cfg.min_delta`` for ``cfg.patience`` epochs.
    Returns the trained params and the per-epoch loss curve.
    """
    X = np.asarray(X, dtype=np.float32)
    targets = np.asarray(targets, dtype=np.int64)
    opt = nn.OptimizerState(cfg.optimizer, cfg.lr)
    dtype = np.dtype(cfg.precision)
    curve = []
    best, stale = np.inf, 0
    for epoch in range(cfg.epochs):
        cache = []
        logits = nn.forward(params, X, cache=cache, dtype=dtype)
        loss, dlogits = nn.softmax_xent(logits, targets)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        curve.append(loss)
        if loss < best - cfg.min_delta:
            best, stale = loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
        grads = nn.backward(params, X, dlogits, cache=cache, dtype=dtype)
        params = nn.opt_step(opt, params, grads)
    return params, curve


def predict_logits(params: nn.ModelParams, X) -> np.ndarray:
    return nn.forward(params, X)
