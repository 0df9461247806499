"""Finite-difference check of the analytic gradients of every training loss."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import losses as L
from .nn import ArchSpec, backward, forward, init_network
from .tensor import finite_difference_grad, relative_error, softmax_rows

TOLERANCE = 1e-4
EPS = 1e-5


def _random_arch(rng) -> list:
    """A fixed 8-16-4 MLP plus one randomly shaped small MLP."""
    depth = int(rng.integers(1, 3))
    hidden = tuple(int(h) for h in rng.integers(6, 20, size=depth))
    return [
        ArchSpec("mlp", (8,), (16,), 4),
        ArchSpec("mlp", (8,), hidden, int(rng.integers(3, 7)), feature_layer=int(rng.integers(depth))),
    ]


def _loss_builders(net, x, y, p_t, f_t):
    """name -> (scalar function of the record, (grad_logits, grad_feature) of the record)."""
    return {
        "L_C": lambda rec: L.cross_entropy(rec.probs, y)[0],
        "L_D": lambda rec: L.kl_distill(p_t, rec.probs)[0],
        "L_F": lambda rec: L.feature_l2(rec.feature, f_t)[0],
    }


def _analytic(name, rec, y, p_t, f_t):
    zeros_logits = np.zeros_like(rec.logits)
    if name == "L_C":
        return L.cross_entropy(rec.probs, y)[1], None
    if name == "L_D":
        return L.kl_distill(p_t, rec.probs)[1], None
    return zeros_logits, L.feature_l2(rec.feature, f_t)[1]


def check_network(net, x, y, p_t, f_t, rng, n_probes=100, eps=EPS,
                  backward_fn: Callable = backward) -> dict:
    """Max relative error per loss over ``n_probes`` random parameter coordinates."""
    rec = forward(net, x)
    sizes = [p.size for p in net.params]
    offsets = np.cumsum([0] + sizes)
    probes = rng.choice(offsets[-1], size=min(n_probes, offsets[-1]), replace=False)
    results = {}
    for name, fn in _loss_builders(net, x, y, p_t, f_t).items():
        g_logits, g_feat = _analytic(name, rec, y, p_t, f_t)
        grads = backward_fn(net, rec, g_logits, g_feat)
        flat_analytic = np.concatenate([g.reshape(-1) for g in grads])

        flat_params = np.concatenate([p.reshape(-1) for p in net.params])

        def f(theta):
            params = [theta[offsets[k]:offsets[k + 1]].reshape(net.params[k].shape) for k in range(len(sizes))]
            probe = type(net)(net.arch, params, net.momentum, net.net_id)
            return fn(forward(probe, x))

        numeric = finite_difference_grad(f, flat_params, eps=eps, indices=probes)
        results[name] = float(relative_error(flat_analytic[probes], numeric).max())
    return results


def run_gradcheck(seed: int = 0, n_probes: int = 100, batch_size: int = 8,
                  backward_fn: Optional[Callable] = None) -> dict:
    """Return ``{loss_name: max relative error}`` over random nets built from ``seed``."""
    backward_fn = backward_fn or backward
    rng = np.random.default_rng(seed)
    worst = {}
    for k, arch in enumerate(_random_arch(rng)):
        net = init_network(arch, [seed, k])
        # nonzero biases so every layer's bias gradient is exercised
        net.params = [p + 0.1 * rng.standard_normal(p.shape) for p in net.params]
        x = rng.standard_normal((batch_size, arch.input_size))
        y = softmax_rows(rng.standard_normal((batch_size, arch.num_classes)) * 2)
        p_t = softmax_rows(rng.standard_normal((batch_size, arch.num_classes)) * 2)
        f_t = rng.standard_normal((batch_size, arch.feature_width))
        res = check_network(net, x, y, p_t, f_t, rng, n_probes, backward_fn=backward_fn)
        for name, err in res.items():
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def failing(results: dict, tol: float = TOLERANCE) -> list:
    return [name for name, err in results.items() if not err < tol]
