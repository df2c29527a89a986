"""Two-layer mean-aggregation GCN with a linear regression head.

Layer update for node ``v``::

    h_v' = relu(W @ mean_{u in N(v)} h_u + B @ h_v)

followed by ``score_v = head_w @ h_v + head_b``. Gradients are derived by
hand; everything runs in float64 numpy.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dynamics import ModerationState
from .graph import Network

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
PARAM_NAMES = ("W0", "B0", "W1", "B1", "head_w", "head_b")


class ModelError(ValueError):
    pass


class ModelFormatError(ModelError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class GcnModel:
    dims: tuple
    W0: np.ndarray
    B0: np.ndarray
    W1: np.ndarray
    B1: np.ndarray
    head_w: np.ndarray
    head_b: float
    activation: str = "relu"
    target_scale: float = 1.0
    aggregation: str = "mean"
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 4 or self.dims[3] != 1:
            raise ModelError(f"dims must be (in, hidden, embedding, 1), got {self.dims}")
        d_in, h1, h2, _ = self.dims
        for name in PARAM_NAMES[:-1]:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.head_b = float(self.head_b)
        expected = {"W0": (h1, d_in), "B0": (h1, d_in), "W1": (h2, h1), "B1": (h2, h1), "head_w": (h2,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ModelError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.activation != "relu":
            raise ModelError(f"unsupported activation {self.activation!r}")
        if self.aggregation not in ("mean", "weighted_mean"):
            raise ModelError(f"unsupported aggregation {self.aggregation!r}")
        if not self.target_scale > 0:
            raise ModelError("target_scale must be positive")

    @classmethod
    def init(cls, dims=(2, 16, 16, 1), seed=0, target_scale=1.0, aggregation="mean"):
        """Glorot-uniform weights, zero head bias."""
        rng = np.random.default_rng(seed)
        d_in, h1, h2, out = dims

        def glorot(fan_out, fan_in):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_out, fan_in))

        return cls(
            dims=dims,
            W0=glorot(h1, d_in),
            B0=glorot(h1, d_in),
            W1=glorot(h2, h1),
            B1=glorot(h2, h1),
            head_w=glorot(out, h2).reshape(-1),
            head_b=0.0,
            target_scale=target_scale,
            aggregation=aggregation,
        )

    def params(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def with_params(self, params: dict) -> "GcnModel":
        return GcnModel(
            dims=self.dims,
            W0=params["W0"].copy(),
            B0=params["B0"].copy(),
            W1=params["W1"].copy(),
            B1=params["B1"].copy(),
            head_w=params["head_w"].copy(),
            head_b=float(params["head_b"]),
            activation=self.activation,
            target_scale=self.target_scale,
            aggregation=self.aggregation,
            training_meta=dict(self.training_meta),
        )

    def equals(self, other: "GcnModel") -> bool:
        return (
            self.dims == other.dims
            and self.activation == other.activation
            and self.aggregation == other.aggregation
            and self.target_scale == other.target_scale
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in PARAM_NAMES)
        )


@dataclass
class LabeledGraph:
    """Network whose ``s``/``z`` are node features, plus per-node true gains."""

    net: Network
    targets: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.shape != (self.net.n,):
            raise ValueError("targets must have one entry per node")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (self.net.n,):
                raise ValueError("mask must have one entry per node")
        if not np.all(np.isfinite(self.targets[self.loss_mask])):
            raise ValueError("targets must be finite on masked-in nodes")

    @property
    def loss_mask(self) -> np.ndarray:
        return np.ones(self.net.n, dtype=bool) if self.mask is None else self.mask


def aggregation_matrix(net: Network, weighted: bool = False) -> sp.csr_matrix:
    """Row-stochastic neighbour averaging; isolated nodes get an all-zero row."""
    a = net.adjacency.copy()
    if not weighted:
        a.data = np.ones_like(a.data)
    rowsum = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, rowsum, out=np.zeros_like(rowsum), where=rowsum > 0)
    return sp.csr_matrix(sp.diags(inv) @ a)


def node_features(net: Network, mod: ModerationState | None = None, z=None) -> np.ndarray:
    z = net.z if z is None else np.asarray(z, dtype=np.float64)
    s = net.s
    if mod is not None and mod.anchors:
        s = mod.effective(s)
        z = mod.effective(z)
    return np.stack([s, z], axis=1)


def _forward(model: GcnModel, P, X):
    if X.shape[1] != model.dims[0]:
        raise ModelError(f"model expects {model.dims[0]} features, got {X.shape[1]}")
    PX = P @ X
    A1 = PX @ model.W0.T + X @ model.B0.T
    H1 = np.maximum(A1, 0.0)
    PH1 = P @ H1
    A2 = PH1 @ model.W1.T + H1 @ model.B1.T
    H2 = np.maximum(A2, 0.0)
    y = H2 @ model.head_w + model.head_b
    return y, (X, PX, A1, H1, PH1, A2, H2)


def forward(model: GcnModel, net: Network, mod: ModerationState | None = None, z=None,
            P=None):
    """Embeddings (n x hidden) and scores (n,) for the current opinion state.

    ``z`` overrides ``net.z`` as the expressed-opinion feature; anchored nodes
    enter with features (0, 0).
    """
    if P is None:
        P = aggregation_matrix(net, model.aggregation == "weighted_mean")
    X = node_features(net, mod, z)
    y, cache = _forward(model, P, X)
    return cache[-1], y


class _Prepared:
    """Per-graph arrays reused across epochs."""

    __slots__ = ("P", "X", "t", "mask")

    def __init__(self, g: LabeledGraph, model: GcnModel):
        self.P = aggregation_matrix(g.net, model.aggregation == "weighted_mean")
        self.X = node_features(g.net)
        self.t = g.targets
        self.mask = g.loss_mask


def _prepare(model, batch):
    return [b if isinstance(b, _Prepared) else _Prepared(b, model) for b in batch]


def _masked_count(prepared):
    count = sum(int(p.mask.sum()) for p in prepared)
    if count == 0:
        raise ValueError("no masked-in nodes in batch")
    return count


def loss(model: GcnModel, batch) -> float:
    """Mean squared error over masked nodes of (score - target_scale * target)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    prepared = _prepare(model, batch)
    count = _masked_count(prepared)
    total = 0.0
    for p in prepared:
        y, _ = _forward(model, p.P, p.X)
        r = (y - model.target_scale * p.t)[p.mask]
        total += float(r @ r)
    return total / count


def gradients(model: GcnModel, batch) -> tuple[float, dict]:
    """Loss and its exact gradient with respect to every parameter."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    prepared = _prepare(model, batch)
    count = _masked_count(prepared)
    grads = {k: np.zeros_like(np.asarray(getattr(model, k), dtype=np.float64)) for k in PARAM_NAMES}
    total = 0.0
    for p in prepared:
        y, (X, PX, A1, H1, PH1, A2, H2) = _forward(model, p.P, p.X)
        r = np.where(p.mask, y - model.target_scale * p.t, 0.0)
        total += float(r @ r)
        dy = 2.0 * r / count
        grads["head_w"] += H2.T @ dy
        grads["head_b"] += dy.sum()
        dA2 = np.outer(dy, model.head_w) * (A2 > 0)
        grads["W1"] += dA2.T @ PH1
        grads["B1"] += dA2.T @ H1
        dH1 = p.P.T @ (dA2 @ model.W1) + dA2 @ model.B1
        dA1 = dH1 * (A1 > 0)
        grads["W0"] += dA1.T @ PX
        grads["B0"] += dA1.T @ X
    grads["head_b"] = float(grads["head_b"])
    return total / count, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 2000
    lr: float = 3e-3
    batch_size: int = 8
    patience: int = 100
    val_frac: float = 0.2
    seed: int = 0
    optimizer: str = "adam"
    dims: tuple = (2, 16, 16, 1)
    target_scale: float | None = None
    aggregation: str = "mean"
    augment: int = 0  # moderated-state samples added per training graph
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
        self.v = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = {}
        for k in params:
            g = np.asarray(grads[k], dtype=np.float64)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            step = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            out[k] = np.asarray(params[k], dtype=np.float64) - step
        out["head_b"] = float(out["head_b"])
        return out


class SGD:
    def __init__(self, params, lr, **_):
        self.lr = lr

    def step(self, params, grads):
        out = {k: np.asarray(params[k], dtype=np.float64) - self.lr * np.asarray(grads[k]) for k in params}
        out["head_b"] = float(out["head_b"])
        return out


def split_indices(count, val_frac, seed):
    """Deterministic train/validation split of ``range(count)``."""
    order = np.random.default_rng(seed).permutation(count)
    n_val = int(round(val_frac * count))
    if count > 1:
        n_val = min(max(n_val, 1 if val_frac > 0 else 0), count - 1)
    else:
        n_val = 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(dataset, config: TrainConfig | None = None, model: GcnModel | None = None):
    """Fit a GCN to per-node gains.

    Returns the parameters with the best validation loss (training loss when
    the validation split is empty) and a per-epoch log.
    """
    if not dataset:
        raise ValueError("empty dataset")
    config = config or TrainConfig()
    train_idx, val_idx = split_indices(len(dataset), config.val_frac, config.seed)
    if model is None:
        scale = config.target_scale
        if scale is None:
            scale = float(np.mean([g.net.n for g in dataset]))
        model = GcnModel.init(config.dims, seed=config.seed, target_scale=scale,
                              aggregation=config.aggregation)
    prepared = _prepare(model, dataset)
    train_set = [prepared[i] for i in train_idx]
    if config.augment:
        from .synth import augment

        extra = augment([dataset[i] for i in train_idx], config.augment, seed=config.seed)
        train_set += _prepare(model, extra)
    val_set = [prepared[i] for i in val_idx]
    monitor = val_set if val_set else train_set

    opt_cls = {"adam": Adam, "sgd": SGD}[config.optimizer]
    params = model.params()
    opt = opt_cls(params, config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(config.seed + 1)

    best_loss = loss(model, monitor)
    best_params = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in params.items()}
    best_epoch = 0
    history = [{"epoch": 0, "train_loss": loss(model, train_set), "val_loss": loss(model, val_set) if val_set else None}]
    stale = 0
    current = model
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            batch_loss, grads = gradients(current, batch)
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss in epoch {epoch}", epoch)
            params = opt.step(current.params(), grads)
            current = current.with_params(params)
        train_loss = loss(current, train_set)
        val_loss = loss(current, val_set) if val_set else None
        if not math.isfinite(train_loss) or (val_loss is not None and not math.isfinite(val_loss)):
            raise DivergenceError(f"non-finite loss after epoch {epoch}", epoch)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        watched = val_loss if val_set else train_loss
        if watched < best_loss:
            best_loss, best_epoch, stale = watched, epoch, 0
            best_params = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in current.params().items()}
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
        log.debug("epoch %d train %.6g val %s", epoch, train_loss, val_loss)

    best = current.with_params(best_params)
    best.training_meta = {
        "config": config.as_dict(),
        "best_epoch": best_epoch,
        "best_loss": best_loss,
        "epochs_run": history[-1]["epoch"],
        "train_graphs": [int(i) for i in train_idx],
        "val_graphs": [int(i) for i in val_idx],
    }
    return best, history


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: GcnModel) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "dims": list(model.dims),
        "activation": model.activation,
        "aggregation": model.aggregation,
        "W0": model.W0.tolist(),
        "B0": model.B0.tolist(),
        "W1": model.W1.tolist(),
        "B1": model.B1.tolist(),
        "head_w": model.head_w.tolist(),
        "head_b": model.head_b,
        "target_scale": model.target_scale,
        "training_meta": model.training_meta,
    }


def save_model(model: GcnModel, path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    text = json.dumps(model_to_dict(model), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> GcnModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {data.get('version') if isinstance(data, dict) else None}")
    try:
        return GcnModel(
            dims=tuple(data["dims"]),
            W0=np.array(data["W0"], dtype=np.float64),
            B0=np.array(data["B0"], dtype=np.float64),
            W1=np.array(data["W1"], dtype=np.float64),
            B1=np.array(data["B1"], dtype=np.float64),
            head_w=np.array(data["head_w"], dtype=np.float64),
            head_b=float(data["head_b"]),
            activation=data.get("activation", "relu"),
            target_scale=float(data["target_scale"]),
            aggregation=data.get("aggregation", "mean"),
            training_meta=data.get("training_meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: inconsistent model file: {exc}") from exc
