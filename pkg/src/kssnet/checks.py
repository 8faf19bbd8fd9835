"""Seeded gradient-check computations for every differentiable component.

Each builder returns ``(fn, params0)`` where ``fn(params) -> (value, grad)``
evaluates a deterministic scalar loss and its reverse-mode gradient at a
flattened parameter vector; :func:`kssnet.gcn.grad_check` compares that
gradient against central finite differences.  Inputs are drawn so that
activation pre-images stay away from the LeakyReLU kink.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .gcn import grad_check
from .graph import identity_mix, normalize
from .lateral import lc_core
from .model import KssModel

GRADCHECK_TOLERANCES = {
    "gcn_layer": 1e-5,
    "lc_2d": 1e-5,
    "lc_3d": 1e-5,
    "full_model": 1e-4,
}

_KINK_MARGIN = 1e-3


def _random_adjacency(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.random((n, n))
    a = (a + a.T) / 2
    return normalize(identity_mix(a, 0.6))


def _pack(arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def _unpack(params: np.ndarray, shapes) -> list[np.ndarray]:
    out = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(params[offset:offset + size].reshape(shape))
        offset += size
    return out


def gcn_layer_check(seed: int = 0, n: int = 4, c_in: int = 3, c_out: int = 2):
    """Loss = sum(leaky_relu(adj @ E @ W)); parameters are E and W."""
    rng = np.random.default_rng(seed)
    adj = ad.Tensor(_random_adjacency(n, rng))
    shapes = [(n, c_in), (c_in, c_out)]
    for _ in range(100):
        e0 = rng.normal(0.0, 1.0, size=shapes[0])
        w0 = rng.normal(0.0, 1.0, size=shapes[1])
        pre = (adj.data @ e0) @ w0
        if np.min(np.abs(pre)) > _KINK_MARGIN:
            break

    def fn(params):
        e_arr, w_arr = _unpack(params, shapes)
        e = ad.Tensor(e_arr, requires_grad=True)
        w = ad.Tensor(w_arr, requires_grad=True)
        out = ad.leaky_relu(ad.matmul(ad.matmul(adj, e), w), 0.2)
        loss = ad.tsum(out)
        loss.backward()
        return float(loss.data), _pack([e.grad, w.grad])

    return fn, _pack([e0, w0])


def _lc_check(seed: int, spatial: tuple[int, ...], c: int = 3, n_labels: int = 4):
    rng = np.random.default_rng(seed)
    size = int(np.prod(spatial))
    shapes = [(c, *spatial), (n_labels, c), (c, n_labels), (c,)]
    x0 = rng.normal(0.0, 1.0, size=shapes[0])
    e0 = rng.normal(0.0, 1.0, size=shapes[1])
    w0 = rng.normal(0.0, 1.0, size=shapes[2])
    b0 = rng.normal(0.0, 1.0, size=shapes[3])

    def fn(params):
        x_arr, e_arr, w_arr, b_arr = _unpack(params, shapes)
        x = ad.Tensor(x_arr.reshape(c, size), requires_grad=True)
        e = ad.Tensor(e_arr, requires_grad=True)
        w = ad.Tensor(w_arr, requires_grad=True)
        b = ad.Tensor(b_arr, requires_grad=True)
        out = lc_core(x, e, w, b, "tanh")
        loss = ad.tsum(ad.mul(out, out))
        loss.backward()
        return float(loss.data), _pack([x.grad, e.grad, w.grad, b.grad])

    return fn, _pack([x0, e0, w0, b0])


def lc_2d_check(seed: int = 0):
    """Squared-norm loss of a 2D lateral connection; all four inputs are parameters."""
    return _lc_check(seed, spatial=(5, 6))


def lc_3d_check(seed: int = 0):
    """Squared-norm loss of a 3D lateral connection; all four inputs are parameters."""
    return _lc_check(seed, spatial=(2, 4, 5))


def _kink_margin(model: KssModel, x: np.ndarray, e0: np.ndarray) -> float:
    """Smallest |pre-activation| feeding a LeakyReLU anywhere in the model."""
    margin = np.inf
    e = ad.Tensor(np.asarray(e0, dtype=np.float64))
    for layer in range(model.gcn_depth):
        pre = ad.matmul(ad.matmul(model.adjacency, e), model.param(f"gcn.layer{layer}.W"))
        margin = min(margin, float(np.min(np.abs(pre.data))))
        e = ad.activate(pre, model.gcn_activation, model.slope)
    h = ad.Tensor(np.asarray(x, dtype=np.float64))
    embeds = model.embeddings(e0)
    for s in range(len(model.stage_channels)):
        pre = ad.conv2d(
            h,
            model.param(f"backbone.stage{s}.conv.weight"),
            model.param(f"backbone.stage{s}.conv.bias"),
            padding=1,
        )
        margin = min(margin, float(np.min(np.abs(pre.data))))
        h = ad.avg_pool2d(ad.leaky_relu(pre, model.slope), 2)
        if s in model.lc_stages:
            h = model._inject(h, embeds[s - model.stage_offset], s)
    return margin


def full_model_check(seed: int = 0, n_labels: int = 4, image: int = 8, batch: int = 2):
    """BCE loss of a tiny two-stage model w.r.t. every model parameter.

    Inputs are resampled until every LeakyReLU pre-activation clears the kink
    by a safe margin, keeping central differences meaningful.
    """
    rng = np.random.default_rng(seed)
    adj = _random_adjacency(n_labels, rng)
    model = KssModel(
        adjacency=adj,
        n_labels=n_labels,
        embed_dim=3,
        stage_channels=(4, 6),
        gcn_depth=2,
        in_channels=2,
        dropout_rate=0.0,
        seed=seed,
        dtype="float64",
    )
    for _ in range(200):
        x = rng.normal(0.0, 1.0, size=(batch, 2, image, image))
        e0 = rng.normal(0.0, 1.0, size=(n_labels, 3))
        if _kink_margin(model, x, e0) > _KINK_MARGIN:
            break
    y = (rng.random((batch, n_labels)) < 0.5).astype(np.float64)
    names = [name for name, _ in model.named_parameters()]
    shapes = [model.param(name).data.shape for name in names]

    def fn(params):
        for name, arr in zip(names, _unpack(params, shapes)):
            model.param(name).data = arr
        model.zero_grad()
        loss = ad.bce_with_logits(model.forward(x, e0), y)
        loss.backward()
        grads = [
            model.param(name).grad
            if model.param(name).grad is not None
            else np.zeros(model.param(name).data.shape)
            for name in names
        ]
        return float(loss.data), _pack(grads)

    return fn, _pack([model.param(name).data for name in names])


def run_standard_checks(seed: int = 0, step: float = 1e-6, corrupt: bool = False) -> dict[str, float]:
    """Gradient-check every component once; returns component -> max relative error.

    ``corrupt`` perturbs the reverse-mode gradients before comparison (a
    negative control used to prove the checker can fail).
    """
    builders = {
        "gcn_layer": gcn_layer_check,
        "lc_2d": lc_2d_check,
        "lc_3d": lc_3d_check,
        "full_model": full_model_check,
    }
    results = {}
    for name, builder in builders.items():
        fn, params = builder(seed)
        if corrupt:
            inner = fn

            def fn(p, inner=inner):
                value, grad = inner(p)
                return value, grad * 1.01 + 1e-3

        results[name] = grad_check(fn, params, step)
    return results
