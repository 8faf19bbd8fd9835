"""Toy model assembly: conv backbone stages, GCN pathway, lateral injections, head.

The backbone is a stack of {3x3 conv, LeakyReLU, 2x average pool} stages whose
channel widths pair one-to-one with the tail of the GCN channel schedule.
Label embeddings from each non-final GCN layer are injected into the paired
backbone stage through a lateral connection; the final layer's embeddings act
as the classifier: logits are the dot product of the pooled backbone feature
with each label's embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import metrics
from . import storage
from .synthetic import LabeledImages

_DTYPES = {"float32": np.float32, "float64": np.float64}


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass
class TrainConfig:
    """Optimizer and schedule settings for the toy trainer.

    Learning rates are per parameter group: ``gcn_lr`` drives the graph
    convolution weights, ``lr`` everything else.  Weight decay is decoupled
    and skipped for biases.  All randomness flows from ``seed``.
    """

    epochs: int = 30
    batch_size: int = 50
    lr: float = 0.01
    gcn_lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    dropout: float = 0.5
    seed: int = 0
    dtype: str = "float32"
    stop_at_train_map: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0 or self.gcn_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")


class KssModel:
    """Backbone stages + GCN stack + lateral connections + dot-product head.

    With ``len(stage_channels) = S`` stages and ``gcn_depth = L`` layers
    (2 <= L <= S), GCN layer j pairs with backbone stage S - L + j; every
    non-final layer's output feeds a lateral connection at its paired stage
    and the final layer's output is the classifier.  The paired stage and
    layer must agree on channel width, so ``stage_channels[S-L:]`` is also
    the GCN channel schedule.
    """

    def __init__(
        self,
        adjacency: np.ndarray,
        n_labels: int,
        embed_dim: int,
        stage_channels: tuple[int, ...] = (16, 32, 64, 128),
        gcn_depth: int = 4,
        in_channels: int = 3,
        lc_stages: tuple[int, ...] | None = None,
        lc_activation: str = "tanh",
        lc_bias: bool = True,
        gcn_activation: str = "leaky_relu",
        slope: float = 0.2,
        dropout_rate: float = 0.5,
        seed: int = 0,
        dtype: str = "float64",
    ):
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.shape != (n_labels, n_labels):
            raise ValueError(f"adjacency shape {adjacency.shape} != ({n_labels}, {n_labels})")
        n_stages = len(stage_channels)
        if not 2 <= gcn_depth <= n_stages:
            raise ValueError(f"gcn_depth must lie in [2, {n_stages}], got {gcn_depth}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
        offset = n_stages - gcn_depth
        if lc_stages is None:
            lc_stages = tuple(range(offset, n_stages - 1))
        lc_stages = tuple(sorted(lc_stages))
        for s in lc_stages:
            if not offset <= s <= n_stages - 2:
                raise ValueError(
                    f"lateral connection at stage {s} has no paired non-final GCN layer"
                )

        self.n_labels = n_labels
        self.embed_dim = embed_dim
        self.stage_channels = tuple(stage_channels)
        self.gcn_depth = gcn_depth
        self.in_channels = in_channels
        self.lc_stages = lc_stages
        self.lc_activation = lc_activation
        self.lc_bias = lc_bias
        self.gcn_activation = gcn_activation
        self.slope = slope
        self.dropout_rate = dropout_rate
        self.seed = seed
        self.dtype = dtype
        np_dtype = _DTYPES[dtype]

        rng = np.random.default_rng(seed)
        self.adjacency = ad.Tensor(adjacency.astype(np_dtype))
        self._params: dict[str, ad.Tensor] = {}

        c_prev = in_channels
        for s, c_out in enumerate(stage_channels):
            fan_in = c_prev * 9
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_prev, 3, 3))
            self._add_param(f"backbone.stage{s}.conv.weight", w, np_dtype)
            self._add_param(f"backbone.stage{s}.conv.bias", np.zeros(c_out), np_dtype)
            c_prev = c_out

        self.gcn_channels = tuple(stage_channels[offset:])
        c_prev = embed_dim
        for layer, c_out in enumerate(self.gcn_channels):
            w = rng.normal(0.0, np.sqrt(2.0 / c_prev), size=(c_prev, c_out))
            self._add_param(f"gcn.layer{layer}.W", w, np_dtype)
            c_prev = c_out

        for s in lc_stages:
            c = stage_channels[s]
            w = rng.normal(0.0, np.sqrt(2.0 / n_labels), size=(c, n_labels))
            self._add_param(f"lc.{s}.g.weight", w, np_dtype)
            self._add_param(f"lc.{s}.g.bias", np.zeros(c), np_dtype, trainable=lc_bias)

    def _add_param(self, name: str, value: np.ndarray, np_dtype, trainable: bool = True) -> None:
        self._params[name] = ad.Tensor(np.asarray(value, dtype=np_dtype), requires_grad=trainable)

    @property
    def stage_offset(self) -> int:
        return len(self.stage_channels) - self.gcn_depth

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        return list(self._params.items())

    def param(self, name: str) -> ad.Tensor:
        return self._params[name]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    # --- forward ---------------------------------------------------------

    def embeddings(self, e0: np.ndarray) -> list[ad.Tensor]:
        """Run the GCN pathway; returns every layer's embedding tensor."""
        e = ad.Tensor(np.asarray(e0, dtype=self.adjacency.data.dtype))
        outs = []
        for layer in range(self.gcn_depth):
            h = ad.matmul(ad.matmul(self.adjacency, e), self._params[f"gcn.layer{layer}.W"])
            e = ad.activate(h, self.gcn_activation, self.slope)
            outs.append(e)
        return outs

    def forward(
        self,
        x: np.ndarray,
        e0: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ad.Tensor:
        """Batched logits (B, N) for image batch ``x`` of shape (B, C_in, H, W)."""
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected (B, {self.in_channels}, H, W) input, got {x.shape}")
        np_dtype = self.adjacency.data.dtype
        embeds = self.embeddings(e0)

        h = ad.Tensor(x.astype(np_dtype, copy=False))
        for s in range(len(self.stage_channels)):
            h = ad.conv2d(
                h,
                self._params[f"backbone.stage{s}.conv.weight"],
                self._params[f"backbone.stage{s}.conv.bias"],
                padding=1,
            )
            h = ad.leaky_relu(h, self.slope)
            h = ad.avg_pool2d(h, 2)
            if s in self.lc_stages:
                h = self._inject(h, embeds[s - self.stage_offset], s)

        pooled = ad.tmean(h, axis=(2, 3))  # (B, C)
        if train and self.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("training-mode forward needs a random generator for dropout")
            keep = (rng.random(pooled.shape) >= self.dropout_rate).astype(np_dtype)
            pooled = ad.mul(pooled, ad.Tensor(keep / (1.0 - self.dropout_rate)))
        return ad.matmul(pooled, ad.swap_last(embeds[-1]))

    def _inject(self, h: ad.Tensor, e: ad.Tensor, stage: int) -> ad.Tensor:
        from .lateral import lc_core  # deferred to keep module import order simple

        b, c, hh, ww = h.shape
        flat = ad.reshape(h, (b, c, hh * ww))
        out = lc_core(
            flat,
            e,
            self._params[f"lc.{stage}.g.weight"],
            self._params[f"lc.{stage}.g.bias"],
            self.lc_activation,
        )
        return ad.reshape(out, (b, c, hh, ww))

    # --- persistence -----------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: np.array(p.data, dtype=np.float64) for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self._params) - set(state))
        extra = sorted(set(state) - set(self._params))
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        np_dtype = _DTYPES[self.dtype]
        for name, p in self._params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(np_dtype)

    def save(self, path) -> None:
        storage.save_named_tensors(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(storage.load_named_tensors(path))

    def config_dict(self) -> dict:
        """Constructor arguments needed to rebuild this model (not the weights)."""
        return {
            "n_labels": self.n_labels,
            "embed_dim": self.embed_dim,
            "stage_channels": self.stage_channels,
            "gcn_depth": self.gcn_depth,
            "in_channels": self.in_channels,
            "lc_stages": self.lc_stages,
            "lc_activation": self.lc_activation,
            "lc_bias": self.lc_bias,
            "gcn_activation": self.gcn_activation,
            "slope": self.slope,
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
            "dtype": self.dtype,
        }


def model_forward(model: KssModel, x: np.ndarray, e0: np.ndarray) -> np.ndarray:
    """Evaluation-mode logits as a plain array."""
    return np.asarray(model.forward(x, e0, train=False).data)


def bce_loss(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean sigmoid binary cross-entropy in the overflow-safe form."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets)
    if z.shape != y.shape:
        raise ValueError(f"shape mismatch: logits {z.shape}, targets {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("targets must be 0 or 1")
    y = y.astype(np.float64)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean())


def predict(model: KssModel, x: np.ndarray, e0: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Chunked evaluation-mode scores for a whole split."""
    chunks = [
        model_forward(model, x[i:i + batch_size], e0)
        for i in range(0, x.shape[0], batch_size)
    ]
    return np.concatenate(chunks, axis=0)


class Adam:
    """Adaptive-moment optimizer with per-group learning rates.

    Decoupled weight decay is applied to every tensor except biases; GCN
    weights use ``cfg.gcn_lr``, everything else ``cfg.lr``.  Moment buffers
    are kept in float64 regardless of parameter dtype.
    """

    def __init__(self, named_params: list[tuple[str, ad.Tensor]], cfg: TrainConfig):
        self.items = named_params
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros(p.data.shape) for name, p in named_params}
        self.v = {name: np.zeros(p.data.shape) for name, p in named_params}

    def zero_grad(self) -> None:
        for _, p in self.items:
            p.grad = None

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in self.items:
            if p.grad is None:
                continue
            g = np.asarray(p.grad, dtype=np.float64)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            lr = cfg.gcn_lr if name.startswith("gcn.") else cfg.lr
            if cfg.weight_decay and not name.endswith(".bias"):
                update = update + cfg.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype)


def train_toy(
    model: KssModel,
    data: LabeledImages,
    cfg: TrainConfig,
    val: LabeledImages | None = None,
    on_epoch=None,
) -> list[dict]:
    """Deterministic minibatch training; returns per-epoch history records.

    Each record carries epoch number, mean minibatch loss, training mAP
    (evaluation-mode, recomputed after the epoch), and validation mAP when a
    validation split is given.  Raises :class:`TrainingDiverged` on a
    non-finite loss.
    """
    if len(data) == 0:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.named_parameters(), cfg)
    np_dtype = _DTYPES[model.dtype]
    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(data))
        losses = []
        for start in range(0, len(data), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            logits = model.forward(data.x[idx], data.e0, train=True, rng=rng)
            loss = ad.bce_with_logits(logits, data.y[idx].astype(np_dtype))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            model.zero_grad()
            loss.backward()
            opt.step()
            losses.append(value)
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "train_map": metrics.map_score(predict(model, data.x, data.e0), data.y),
        }
        if val is not None:
            record["val_map"] = metrics.map_score(predict(model, val.x, val.e0), val.y)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if cfg.stop_at_train_map is not None and record["train_map"] >= cfg.stop_at_train_map:
            break
    return history


def make_depth_variant(model: KssModel, depth: int, seed: int | None = None) -> KssModel:
    """Shallower copy: drop leading GCN layers and their lateral connections.

    The first surviving layer is re-initialized to consume the initial
    embeddings directly (its input width changes to ``embed_dim``); all other
    parameters are copied.  ``depth`` equal to the current depth returns an
    identical copy.
    """
    if depth < 2:
        raise ValueError(f"depth must be >= 2, got {depth}")
    if depth > model.gcn_depth:
        raise ValueError(f"depth {depth} exceeds model depth {model.gcn_depth}")
    new_offset = len(model.stage_channels) - depth
    surviving_lc = tuple(s for s in model.lc_stages if s >= new_offset)
    variant = KssModel(
        adjacency=np.array(model.adjacency.data, dtype=np.float64),
        **{**model.config_dict(), "gcn_depth": depth, "lc_stages": surviving_lc,
           "seed": model.seed if seed is None else seed},
    )
    dropped = model.gcn_depth - depth
    state = model.state_dict()
    new_state = variant.state_dict()
    for name in new_state:
        if name.startswith("gcn.layer"):
            layer = int(name.split(".")[1][len("layer"):])
            if layer == 0 and dropped > 0:
                continue  # retargeted layer keeps its fresh initialization
            new_state[name] = state[f"gcn.layer{layer + dropped}.W"]
        elif name in state:
            new_state[name] = state[name]
    variant.load_state_dict(new_state)
    return variant
