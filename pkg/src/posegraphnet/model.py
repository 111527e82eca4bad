"""PoseGraphNet: split-kernel graph convolutions over adaptive adjacencies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .initialization import xavier_init
from .skeleton import NeighborPartition, SkeletonGraph, build_partition
from .tensor import Parameter, ShapeError, Tensor

GROUPS = ("self", "parent", "child")
DEGREE_EPS = 1e-6


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden: int = 768
    dropout: float = 0.5
    per_layer_adjacency: bool = False
    # millimetres per unit of the final layer's raw output
    output_scale: float = 100.0
    # "in_out": row degrees on the left, column degrees on the right;
    # "row": row degrees on both sides
    degree_mode: str = "in_out"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError(f"hidden width must be positive, got {self.hidden}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout}")
        if self.output_scale <= 0:
            raise ConfigError(f"output_scale must be positive, got {self.output_scale}")
        if self.degree_mode not in ("in_out", "row"):
            raise ConfigError(f"degree_mode must be 'in_out' or 'row', got {self.degree_mode!r}")


def normalize_adjacency(raw: Tensor, eps: float = DEGREE_EPS, mode: str = "in_out") -> Tensor:
    """Degree normalisation ``D_r^-1/2 A D_c^-1/2`` with absolute-value degrees
    plus ``eps``.

    ``mode="in_out"`` (default) takes row sums for ``D_r`` and column sums for
    ``D_c``; every output entry then has magnitude <= 1 even for directed
    masks. ``mode="row"`` uses row sums on both sides. The two agree on
    symmetric matrices.
    """
    a = raw.data
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {raw.dims}")
    if mode not in ("in_out", "row"):
        raise ValueError(f"unknown normalisation mode '{mode}'")
    absa = np.abs(a)
    dr = absa.sum(axis=1) + eps
    dc = (absa.sum(axis=0) if mode == "in_out" else absa.sum(axis=1)) + eps
    sr = 1.0 / np.sqrt(dr)
    sc = 1.0 / np.sqrt(dc)
    out = sr[:, None] * a * sc[None, :]

    def backward(g):
        ga = g * sr[:, None] * sc[None, :]
        gsr = (g * a * sc[None, :]).sum(axis=1)
        gsc = (g * a * sr[:, None]).sum(axis=0)
        gdr = gsr * -0.5 * sr / dr
        gdc = gsc * -0.5 * sc / dc
        sign = np.sign(a)
        if mode == "in_out":
            ga = ga + gdr[:, None] * sign + gdc[None, :] * sign
        else:
            ga = ga + (gdr + gdc)[:, None] * sign
        return (ga,)

    return T.make_op(out, (raw,), backward, "normalize_adjacency")


class AdjacencySet:
    def __init__(self, partition: NeighborPartition, degree_mode: str = "in_out"):
        masks = partition.as_dict()
        self.raw = {g: Parameter(masks[g].copy()) for g in GROUPS}
        self.degree_mode = degree_mode

    def normalized(self) -> dict[str, Tensor]:
        return {g: normalize_adjacency(self.raw[g], mode=self.degree_mode) for g in GROUPS}

    def named_parameters(self, prefix: str):
        return {f"{prefix}.{g}": self.raw[g] for g in GROUPS}


class GraphConv:
    def __init__(self, f_in: int, f_out: int, rng: np.random.Generator | None = None):
        self.f_in, self.f_out = f_in, f_out
        self.weights = {}
        for g in GROUPS:
            w = xavier_init((f_in, f_out), rng) if rng is not None else np.zeros((f_in, f_out))
            self.weights[g] = Parameter(w)
        self.bias = Parameter(np.zeros(f_out))

    def forward(self, adj: dict[str, Tensor], h: Tensor) -> Tensor:
        if h.data.ndim != 3 or h.shape[2] != self.f_in:
            raise ShapeError(f"graph conv expects [B, N, {self.f_in}], got {h.dims}")
        n = h.shape[1]
        out = None
        for g in GROUPS:
            a = adj[g]
            if a.shape != (n, n):
                raise ShapeError(f"{g} adjacency dims {a.dims} do not match {n} nodes")
            term = T.matmul(a, T.matmul(h, self.weights[g]))
            out = term if out is None else T.add(out, term)
        return T.add(out, self.bias)

    def named_parameters(self, prefix: str):
        params = {f"{prefix}.w_{g}": self.weights[g] for g in GROUPS}
        params[f"{prefix}.bias"] = self.bias
        return params


class BatchNorm:
    """Per-channel batch norm pooled over batch and joint axes."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return batchnorm_forward(self, x, training)

    def named_parameters(self, prefix: str):
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def named_buffers(self, prefix: str):
        return {f"{prefix}.running_mean": self.running_mean, f"{prefix}.running_var": self.running_var}


class BatchError(ValueError):
    pass


def batchnorm_forward(layer: BatchNorm, x: Tensor, training: bool) -> Tensor:
    xd = x.data
    c = layer.gamma.shape[0]
    if xd.ndim != 3 or xd.shape[2] != c:
        raise ShapeError(f"batch norm expects [B, N, {c}], got {x.dims}")
    gamma, beta = layer.gamma.data, layer.beta.data
    if not training:
        inv_std = 1.0 / np.sqrt(layer.running_var + layer.eps)
        xhat = (xd - layer.running_mean) * inv_std
        return T.make_op(xhat * gamma + beta, (x, layer.gamma, layer.beta),
                         lambda g: (g * gamma * inv_std, (g * xhat).sum(axis=(0, 1)), g.sum(axis=(0, 1))),
                         "batchnorm_eval")

    m = xd.shape[0] * xd.shape[1]
    if m < 2:
        raise BatchError(f"batch norm in training mode needs at least 2 rows, got {m}")
    mu = xd.mean(axis=(0, 1))
    var = xd.var(axis=(0, 1))
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    xhat = (xd - mu) * inv_std
    mom = layer.momentum
    layer.running_mean = (1.0 - mom) * layer.running_mean + mom * mu
    layer.running_var = (1.0 - mom) * layer.running_var + mom * var

    def backward(g):
        dxhat = g * gamma
        dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=(0, 1))
                              - xhat * (dxhat * xhat).sum(axis=(0, 1)))
        return dx, (g * xhat).sum(axis=(0, 1)), g.sum(axis=(0, 1))

    return T.make_op(xhat * gamma + beta, (x, layer.gamma, layer.beta), backward, "batchnorm")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return T.mul(x, keep / (1.0 - rate))


class Unit:
    """GraphConv -> BatchNorm -> ReLU -> Dropout."""

    def __init__(self, f_in, f_out, config: ModelConfig, rng):
        self.conv = GraphConv(f_in, f_out, rng)
        self.bn = BatchNorm(f_out, config.bn_eps, config.bn_momentum)
        self.rate = config.dropout

    def forward(self, adj, h, training, rng):
        y = self.bn.forward(self.conv.forward(adj, h), training)
        return dropout(T.relu(y), self.rate, training, rng)


class PoseGraphNet:
    def __init__(self, skeleton: SkeletonGraph, config: ModelConfig | None = None,
                 init_rng: np.random.Generator | None = None,
                 dropout_rng: np.random.Generator | None = None):
        """Weights are Xavier-initialised from ``init_rng``; with ``init_rng=None``
        all conv weights start at zero."""
        self.skeleton = skeleton
        self.config = config or ModelConfig()
        self.dropout_rng = dropout_rng if dropout_rng is not None else np.random.default_rng(0)
        h = self.config.hidden
        partition = build_partition(skeleton)
        n_adj = 8 if self.config.per_layer_adjacency else 1
        self.adjacency = [AdjacencySet(partition, self.config.degree_mode) for _ in range(n_adj)]
        self.input_unit = Unit(2, h, self.config, init_rng)
        self.blocks = [(Unit(h, h, self.config, init_rng), Unit(h, h, self.config, init_rng))
                       for _ in range(3)]
        self.output_conv = GraphConv(h, 3, init_rng)

    @property
    def n_joints(self) -> int:
        return self.skeleton.n

    def convs(self) -> list[GraphConv]:
        out = [self.input_unit.conv]
        for u1, u2 in self.blocks:
            out += [u1.conv, u2.conv]
        return out + [self.output_conv]

    def batchnorms(self) -> list[BatchNorm]:
        out = [self.input_unit.bn]
        for u1, u2 in self.blocks:
            out += [u1.bn, u2.bn]
        return out

    def _adj(self, layer: int) -> AdjacencySet:
        return self.adjacency[layer if len(self.adjacency) > 1 else 0]

    def forward(self, pose2d, training: bool = False) -> Tensor:
        x = pose2d if isinstance(pose2d, Tensor) else Tensor(pose2d, op="input")
        n = self.n_joints
        if x.data.ndim != 3 or x.shape[1] != n or x.shape[2] != 2:
            raise ShapeError(f"expected input [B, {n}, 2], got {x.dims}")
        if len(self.adjacency) == 1:
            shared = self.adjacency[0].normalized()
            adj = [shared] * 8
        else:
            adj = [a.normalized() for a in self.adjacency]
        rng = self.dropout_rng
        h = self.input_unit.forward(adj[0], x, training, rng)
        layer = 1
        for u1, u2 in self.blocks:
            y = u1.forward(adj[layer], h, training, rng)
            y = u2.forward(adj[layer + 1], y, training, rng)
            h = T.add(h, y)
            layer += 2
        out = self.output_conv.forward(adj[7], h)
        if self.config.output_scale != 1.0:
            out = T.scale(out, self.config.output_scale)
        return out

    __call__ = forward

    def predict(self, pose2d) -> np.ndarray:
        """Eval-mode forward without graph recording."""
        with T.no_grad():
            return self.forward(pose2d, training=False).data

    def named_parameters(self) -> dict[str, Parameter]:
        params: dict[str, Parameter] = {}
        if len(self.adjacency) == 1:
            params.update(self.adjacency[0].named_parameters("adjacency"))
        else:
            for i, a in enumerate(self.adjacency):
                params.update(a.named_parameters(f"adjacency{i}"))
        params.update(self.input_unit.conv.named_parameters("input.conv"))
        params.update(self.input_unit.bn.named_parameters("input.bn"))
        for b, (u1, u2) in enumerate(self.blocks):
            for k, u in enumerate((u1, u2)):
                params.update(u.conv.named_parameters(f"blocks.{b}.unit{k}.conv"))
                params.update(u.bn.named_parameters(f"blocks.{b}.unit{k}.bn"))
        params.update(self.output_conv.named_parameters("output.conv"))
        return params

    def named_buffers(self) -> dict[str, np.ndarray]:
        bufs = dict(self.input_unit.bn.named_buffers("input.bn"))
        for b, (u1, u2) in enumerate(self.blocks):
            for k, u in enumerate((u1, u2)):
                bufs.update(u.bn.named_buffers(f"blocks.{b}.unit{k}.bn"))
        return bufs

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        prefix, attr = name.rsplit(".", 1)
        bn = {p: layer for p, layer in zip(self._bn_prefixes(), self.batchnorms())}[prefix]
        setattr(bn, attr, np.array(value, dtype=np.float64))

    def _bn_prefixes(self) -> list[str]:
        return ["input.bn"] + [f"blocks.{b}.unit{k}.bn" for b in range(3) for k in range(2)]

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def zero_grads(self) -> None:
        T.zero_grads(self.parameters())

    def param_count(self) -> int:
        return param_count(self)

    def normalized_adjacency(self, group: str, layer: int = 0) -> np.ndarray:
        if group not in GROUPS:
            raise ValueError(f"unknown adjacency group '{group}' (expected one of {', '.join(GROUPS)})")
        with T.no_grad():
            return self._adj(layer).normalized()[group].data


def param_count(net: PoseGraphNet) -> int:
    return int(sum(p.data.size for p in net.parameters() if p.trainable))


def param_count_closed_form(hidden: int, n_joints: int) -> int:
    h = hidden
    return 18 * h * h + 6 * h + 9 * h + (7 * h + 3) + 14 * h + 3 * n_joints * n_joints


def export_adjacency(net: PoseGraphNet, group: str, layer: int = 0) -> str:
    """Normalised adjacency for ``group`` as a CSV table labelled by joint names."""
    mat = net.normalized_adjacency(group, layer)
    names = net.skeleton.names
    lines = ["joint," + ",".join(names)]
    for name, row in zip(names, mat):
        lines.append(name + "," + ",".join(f"{v:.4f}" for v in row))
    return "\n".join(lines) + "\n"


def parse_adjacency_table(text: str) -> tuple[list[str], np.ndarray]:
    rows = [line.split(",") for line in text.strip().splitlines()]
    names = rows[0][1:]
    return names, np.array([[float(v) for v in r[1:]] for r in rows[1:]])
