"""Dense MLP numerics with hand-written reverse mode.

Parameters live in float32 and are rounded back to it on every update. Products
run in float64 unless the caller asks for float32 GEMMs; losses, bias sums and
optimizer moments are always float64.
"""

from dataclasses import dataclass, field

import numpy as np

from .serialize import FormatError, decode_f32, encode_f32, read_json, require, write_json

ACTIVATIONS = ("relu", "none")


@dataclass(eq=False)
class ModelParams:
    layers: list  # [(W: out x in, b: out)]
    activation: str = "relu"
    seed: int = 0

    @property
    def dims(self) -> list:
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    def arrays(self) -> list:
        return [a for layer in self.layers for a in layer]

    def copy(self) -> "ModelParams":
        return ModelParams([(W.copy(), b.copy()) for W, b in self.layers], self.activation, self.seed)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.activation == other.activation
            and self.seed == other.seed
            and len(self.layers) == len(other.layers)
            and all(a.shape == b.shape and np.array_equal(a.view(np.uint32), b.view(np.uint32))
                    for a, b in zip(self.arrays(), other.arrays()))
        )


@dataclass
class Gradients:
    layers: list
    dX: np.ndarray = None

    def arrays(self) -> list:
        return [a for layer in self.layers for a in layer]


def layer_seeds(seed: int, n: int) -> list:
    """Independent per-layer generators split from one 64-bit seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def derive_seed(*parts) -> int:
    """Mix integers into a fresh 63-bit seed."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> 1)


def init_params(dims, activation="relu", seed=0) -> ModelParams:
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError("need at least one layer (two dims)")
    if min(dims) <= 0:
        raise ValueError(f"zero dimension in {dims}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    layers = []
    for rng, fan_in, fan_out in zip(layer_seeds(seed, len(dims) - 1), dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32)
        layers.append((W, np.zeros(fan_out, dtype=np.float32)))
    return ModelParams(layers, activation, int(seed))


def forward(p: ModelParams, X, act_last=False, cache=None, dtype=np.float64):
    """Apply the MLP to the rows of X.

    The activation follows every hidden layer, and the output layer too when
    ``act_last`` (encoder use). Pre-activations are appended to ``cache`` if given.
    ``dtype`` is the GEMM precision; the output is always float64.
    """
    H = np.asarray(X, dtype=dtype)
    if H.ndim != 2 or H.shape[1] != p.layers[0][0].shape[1]:
        raise ValueError(f"input of shape {H.shape} does not match in-dim {p.layers[0][0].shape[1]}")
    last = len(p.layers) - 1
    for i, (W, b) in enumerate(p.layers):
        if cache is not None:
            cache.append(H)
        H = H @ W.T.astype(dtype, copy=False) + b.astype(dtype, copy=False)
        if p.activation == "relu" and (i < last or act_last):
            if cache is not None:
                cache.append(H)
            H = np.maximum(H, 0)
    return H.astype(np.float64, copy=False)


def backward(p: ModelParams, X, upstream, act_last=False, cache=None, dtype=np.float64) -> Gradients:
    """Gradients of sum(upstream * forward(p, X)) w.r.t. every W, b and X."""
    if cache is None:
        cache = []
        forward(p, X, act_last, cache, dtype)
    G = np.asarray(upstream, dtype=dtype)
    n_out = p.layers[-1][0].shape[0]
    if G.shape != (cache[0].shape[0], n_out):
        raise ValueError(f"upstream shape {G.shape} does not match output ({cache[0].shape[0]}, {n_out})")
    last = len(p.layers) - 1
    grads = [None] * len(p.layers)
    k = len(cache)
    for i in range(last, -1, -1):
        W = p.layers[i][0].astype(dtype, copy=False)
        if p.activation == "relu" and (i < last or act_last):
            k -= 1
            G = G * (cache[k] > 0)
        k -= 1
        H_in = cache[k]
        grads[i] = (G.T @ H_in, G.sum(axis=0, dtype=np.float64))
        G = G @ W
    return Gradients(grads, G)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape != (z.shape[0],) or y.min() < 0 or y.max() >= z.shape[1]:
        raise ValueError("labels must be valid class indices, one per row")
    rows = np.arange(z.shape[0])
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[rows, y]))
    d = np.exp(shifted - log_norm[:, None])
    d[rows, y] -= 1.0
    return loss, d / z.shape[0]


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def opt_step(state: OptimizerState, target, grads):
    """Return the updated ``target`` (ModelParams or a single array); ``state`` advances in place."""
    if isinstance(target, ModelParams):
        params = target.arrays()
        gs = grads.arrays() if isinstance(grads, Gradients) else list(grads)
    else:
        params = [np.asarray(target)]
        gs = [grads.dX if isinstance(grads, Gradients) else grads]
    if len(params) != len(gs) or any(np.shape(x) != np.shape(g) for x, g in zip(params, gs)):
        raise ValueError("gradient shapes do not match the target")
    for i, g in enumerate(gs):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in tensor {i} (shape {np.shape(g)}) at optimizer step {state.step + 1}"
            )

    state.step += 1
    if state.kind == "sgd":
        new = [(x - state.lr * np.asarray(g, np.float64)).astype(np.float32) for x, g in zip(params, gs)]
    else:
        if not state.m:
            state.m = [np.zeros(np.shape(x)) for x in params]
            state.v = [np.zeros(np.shape(x)) for x in params]
        c1 = 1.0 - state.beta1 ** state.step
        c2 = 1.0 - state.beta2 ** state.step
        new = []
        for i, (x, g) in enumerate(zip(params, gs)):
            g = np.asarray(g, np.float64)
            state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
            state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
            upd = state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
            new.append((x - upd).astype(np.float32))

    if isinstance(target, ModelParams):
        it = iter(new)
        return ModelParams([(next(it), next(it)) for _ in target.layers], target.activation, target.seed)
    return new[0]


# -- checkpoints --------------------------------------------------------------

def params_to_dict(p: ModelParams, opt: OptimizerState = None, classes=None) -> dict:
    doc = {
        "dims": p.dims,
        "activation": p.activation,
        "seed": p.seed,
        "tensors": [{"shape": list(a.shape), "data": encode_f32(a)} for a in p.arrays()],
    }
    if classes is not None:
        doc["classes"] = [int(c) for c in classes]
    if opt is not None:
        doc["optimizer"] = {k: getattr(opt, k) for k in ("kind", "lr", "beta1", "beta2", "eps", "step")}
    return doc


def params_from_dict(doc: dict) -> ModelParams:
    require(doc, "dims", "activation", "seed", "tensors", where="checkpoint")
    dims = doc["dims"]
    if len(doc["tensors"]) != 2 * (len(dims) - 1):
        raise FormatError("checkpoint: tensor count does not match dims")
    arrays = [decode_f32(t["data"], t["shape"]) for t in doc["tensors"]]
    layers = list(zip(arrays[0::2], arrays[1::2]))
    for (W, b), fan_in, fan_out in zip(layers, dims[:-1], dims[1:]):
        if W.shape != (fan_out, fan_in) or b.shape != (fan_out,):
            raise FormatError("checkpoint: tensor shapes do not chain")
    return ModelParams(layers, doc["activation"], int(doc["seed"]))


def save_params(p: ModelParams, path, opt=None, classes=None):
    write_json(path, params_to_dict(p, opt, classes))


def load_params(path) -> ModelParams:
    return params_from_dict(read_json(path))
