"""Stacked graph convolution over the normalized KS adjacency.

Each layer computes ``sigma(A' @ E @ W)`` with no bias term; all intermediate
embeddings are retained because they feed the lateral connections.  Weights
are initialized with variance scaling (zero mean, variance 2 / fan_in) from a
seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("leaky_relu", "tanh", "sigmoid", "identity")


def leaky_relu(x, slope: float = 0.2):
    """x for x >= 0, slope * x otherwise; elementwise on arrays."""
    x = np.asarray(x)
    return np.where(x >= 0, x, slope * x)[()]


def apply_activation(name: str, x, slope: float = 0.2):
    if name == "leaky_relu":
        return leaky_relu(x, slope)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))
    if name == "identity":
        return np.asarray(x)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class GcnLayer:
    """One graph-convolution layer: a learnable map plus an activation."""

    weight: np.ndarray  # (c_in, c_out)
    activation: str = "leaky_relu"
    slope: float = 0.2

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be 2-D, got shape {self.weight.shape}")
        if not np.all(np.isfinite(self.weight)):
            raise ValueError("weight has non-finite entries")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def c_in(self) -> int:
        return self.weight.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class GcnStack:
    """Ordered layers sharing one normalized adjacency."""

    layers: list[GcnLayer]
    adjacency: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got {a.shape}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.c_out != nxt.c_in:
                raise ValueError(
                    f"channel chain broken: {prev.c_out} -> {nxt.c_in}"
                )

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


def gcn_layer_forward(adj: np.ndarray, e: np.ndarray, layer: GcnLayer) -> np.ndarray:
    """Propagate embeddings one layer: ``sigma((adj @ e) @ W)``."""
    adj = np.asarray(adj, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if adj.shape[0] != adj.shape[1] or adj.shape[1] != e.shape[0]:
        raise ValueError(f"shape mismatch: adj {adj.shape}, embeddings {e.shape}")
    if e.shape[1] != layer.c_in:
        raise ValueError(f"embedding width {e.shape[1]} != layer c_in {layer.c_in}")
    return apply_activation(layer.activation, (adj @ e) @ layer.weight, layer.slope)


def gcn_stack_forward(stack: GcnStack, e0: np.ndarray) -> list[np.ndarray]:
    """Chain all layers; returns every intermediate embedding matrix."""
    e0 = np.asarray(e0, dtype=np.float64)
    if e0.shape[0] != stack.n_nodes:
        raise ValueError(f"embeddings for {e0.shape[0]} nodes, graph has {stack.n_nodes}")
    outputs = []
    e = e0
    for layer in stack.layers:
        e = gcn_layer_forward(stack.adjacency, e, layer)
        outputs.append(e)
    return outputs


def init_gcn_weight(c_in: int, c_out: int, rng: np.random.Generator) -> np.ndarray:
    """Variance-scaling init: zero mean, variance 2 / c_in."""
    return rng.normal(0.0, np.sqrt(2.0 / c_in), size=(c_in, c_out))


def grad_check(fn, params: np.ndarray, step: float = 1e-6) -> float:
    """Compare a computation's reverse-mode gradient against central differences.

    ``fn(params) -> (value, grad)`` evaluates a deterministic scalar and its
    reverse-mode gradient at a flattened parameter vector.  Returns
    ``max_i |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``; raises on non-finite
    values.  The computation should be smooth at the evaluation point (keep
    activation inputs away from kinks).
    """
    params = np.asarray(params, dtype=np.float64)
    value, g_ad = fn(params)
    g_ad = np.asarray(g_ad, dtype=np.float64)
    if g_ad.shape != params.shape:
        raise ValueError(f"gradient shape {g_ad.shape} != params shape {params.shape}")
    if not (np.isfinite(value) and np.all(np.isfinite(g_ad))):
        raise ValueError("non-finite value or gradient")
    if params.size == 0:
        return 0.0
    g_fd = np.empty_like(params)
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] = params[i] + step
        hi = fn(bumped)[0]
        bumped[i] = params[i] - step
        lo = fn(bumped)[0]
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("non-finite value during finite differencing")
        g_fd[i] = (hi - lo) / (2.0 * step)
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom))
