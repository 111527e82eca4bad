"""Central finite-difference checks for the reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Parameter, Tensor, backward, no_grad, zero_grads

# Denominator floor, relative to max(1, |loss|): gradient entries below it are
# compared in absolute terms (biases feeding batch norm have exactly zero grad).
REL_FLOOR = 1e-6


def numerical_grad(loss_fn: Callable[[], Tensor], param: Parameter, h: float = 1e-4) -> np.ndarray:
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Parameter],
                    h: float = 1e-4) -> dict[str, float]:
    """Max entrywise relative error between analytic and numerical gradients,
    per named parameter. ``loss_fn`` must be deterministic."""
    plist = list(params.values())
    zero_grads(plist)
    loss = loss_fn()
    backward(loss)
    floor = REL_FLOOR * max(1.0, abs(loss.item()))
    errors = {}
    for name, p in params.items():
        analytic = p.grad.copy()
        errors[name] = relative_error(analytic, numerical_grad(loss_fn, p, h), floor)
    zero_grads(plist)
    return errors


def model_gradient_errors(hidden: int = 4, n_joints: int = 3, batch: int = 2, seed: int = 0,
                          h: float = 1e-4, degree_mode: str = "in_out") -> dict[str, float]:
    """Finite-difference check of every parameter of a tiny model on a chain
    skeleton, training mode (batch norm + dropout with a fixed mask).

    Parameters are moved to a random point first: at the mask initialisation
    many adjacency entries sit exactly on the kink of ``|a|`` and rows with
    zero degree have curvature far above what a step of ``h`` resolves.
    """
    from .model import ModelConfig, PoseGraphNet
    from .skeleton import chain
    from .tensor import mul, scale, sub, tsum

    rng = np.random.default_rng(seed)
    net = PoseGraphNet(chain(n_joints), ModelConfig(hidden=hidden, dropout=0.5, output_scale=1.0,
                                                    degree_mode=degree_mode),
                       init_rng=np.random.default_rng(seed + 1))
    base = {k: p.data.copy() for k, p in net.named_parameters().items()}
    x = rng.normal(size=(batch, n_joints, 2))
    y = Tensor(rng.normal(size=(batch, n_joints, 3)))

    def loss_fn():
        net.dropout_rng = np.random.default_rng(seed + 2)
        d = sub(net.forward(x, training=True), y)
        return scale(tsum(mul(d, d)), 1.0 / batch)

    # redraw until every relu input and adjacency entry is clear of its kink
    for _ in range(100):
        for name, p in net.named_parameters().items():
            p.data[...] = base[name]
            if name.startswith("adjacency") or ".bn." in name or name.endswith("bias"):
                p.data += rng.normal(scale=0.5, size=p.shape)
        if kink_margin(net, loss_fn) > KINK_MARGIN:
            break
    else:
        raise RuntimeError("could not find a smooth point for the gradient check")
    return check_gradients(loss_fn, net.named_parameters(), h)


KINK_MARGIN = 1e-2


def kink_margin(net, loss_fn) -> float:
    """Smallest distance of any relu input or adjacency entry from zero."""
    from .tensor import graph_nodes

    margin = min(float(np.min(np.abs(p.data))) for k, p in net.named_parameters().items()
                 if k.startswith("adjacency"))
    for node in graph_nodes(loss_fn()):
        if node.op == "relu":
            margin = min(margin, float(np.min(np.abs(node._parents[0].data))))
    return margin
