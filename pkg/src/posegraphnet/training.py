"""Loss, optimiser, plateau scheduler and the epoch loop."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import DataError, stack_inputs, stack_targets
from .initialization import xavier_init  # noqa: F401  (re-exported)
from .metrics import joint_errors_p1
from .model import ConfigError, ModelConfig, PoseGraphNet
from .skeleton import SkeletonGraph
from .tensor import Parameter, ShapeError, StateError, Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 70
    batch_size: int = 256
    dropout: float = 0.5
    lr: float = 0.001
    lr_factor: float = 0.1
    patience: int = 5
    threshold: float = 1e-4
    min_lr: float = 1e-6
    val_fraction: float = 0.05
    seed: int = 0
    hidden: int = 768
    per_layer_adjacency: bool = False
    output_scale: float = 100.0
    degree_mode: str = "in_out"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.lr_factor < 1.0:
            raise ConfigError(f"lr_factor must be in (0, 1), got {self.lr_factor}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key '{unknown[0]}'")
        return cls(**values)

    def model_config(self) -> ModelConfig:
        return ModelConfig(hidden=self.hidden, dropout=self.dropout,
                           per_layer_adjacency=self.per_layer_adjacency,
                           output_scale=self.output_scale, degree_mode=self.degree_mode)


def mse_loss(pred: Tensor, gt) -> Tensor:
    """Per-sample sum of squared joint distances, averaged over the batch."""
    gt = gt if isinstance(gt, Tensor) else Tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"mse_loss: dims differ {pred.dims} vs {gt.dims}")
    d = T.sub(pred, gt)
    return T.scale(T.tsum(T.mul(d, d)), 1.0 / pred.shape[0])


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        if not any(p.has_grad for p in self.params):
            raise StateError("optimizer step before any backward pass")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once the monitored loss has
    failed to improve by a relative ``threshold`` for ``patience`` epochs."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 5,
                 threshold: float = 1e-4, min_lr: float = 1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best * (1.0 - self.threshold):
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


def make_batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Consecutive slices of ``order``; a trailing batch of one is merged into
    the previous batch (batch norm needs two rows)."""
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "split", "shuffle", "dropout")
    return {n: np.random.default_rng(s) for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def build_model(config: TrainConfig, skeleton: SkeletonGraph) -> tuple[PoseGraphNet, dict]:
    rngs = seed_streams(config.seed)
    model = PoseGraphNet(skeleton, config.model_config(), init_rng=rngs["init"], dropout_rng=rngs["dropout"])
    return model, rngs


def _eval_arrays(model, x, y, batch_size):
    with T.no_grad():
        pred = np.concatenate([model.forward(x[i:i + batch_size], training=False).data
                               for i in range(0, len(x), batch_size)])
    loss = float(np.sum((pred - y) ** 2) / len(x))
    err = joint_errors_p1(pred, y, model.skeleton.root_index)
    keep = np.arange(err.shape[1]) != model.skeleton.root_index
    return loss, float(err[:, keep].mean())


@dataclass
class TrainResult:
    model: PoseGraphNet
    log: list[dict]
    steps: int


def train(config: TrainConfig, samples, skeleton: SkeletonGraph, out_dir=None,
          max_steps: int | None = None) -> TrainResult:
    """Train a fresh model. With ``out_dir`` set, appends per-epoch records to
    ``metrics.jsonl`` and writes ``best.ckpt`` / ``final.ckpt`` there."""
    if not samples:
        raise DataError("training dataset is empty")
    model, rngs = build_model(config, skeleton)
    x = stack_inputs(samples)
    y = stack_targets(samples, skeleton.root_index)
    if np.any(y[:, skeleton.root_index] != 0.0):
        raise DataError("targets are not root-centred")

    n = len(samples)
    perm = rngs["split"].permutation(n)
    n_val = int(n * config.val_fraction)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if config.batch_size > len(train_idx) and config.epochs > 0:
        raise ConfigError(f"batch_size {config.batch_size} exceeds training split size {len(train_idx)}")
    # without a held-out split the scheduler monitors the training set
    mon_x, mon_y = (x[val_idx], y[val_idx]) if n_val else (x[train_idx], y[train_idx])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text("")

    opt = Adam(model.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
    sched = PlateauScheduler(config.lr, config.lr_factor, config.patience, config.threshold, config.min_lr)
    records: list[dict] = []
    best = math.inf
    steps = 0
    for epoch in range(1, config.epochs + 1):
        order = train_idx[rngs["shuffle"].permutation(len(train_idx))]
        total, count = 0.0, 0
        for batch in make_batches(order, config.batch_size):
            pred = model.forward(x[batch], training=True)
            loss = mse_loss(pred, y[batch])
            if not np.isfinite(loss.item()):
                bad = T.first_nonfinite(loss)
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {steps + 1}; "
                                    f"first non-finite tensor produced by '{bad.op}' with dims {bad.dims}")
            model.zero_grads()
            T.backward(loss)
            opt.step()
            steps += 1
            total += loss.item() * len(batch)
            count += len(batch)
            if max_steps is not None and steps >= max_steps:
                break
        val_loss, val_p1 = _eval_arrays(model, mon_x, mon_y, config.batch_size)
        rec = {"epoch": epoch, "lr": opt.lr, "train_loss": total / count,
               "val_loss": val_loss, "val_mpjpe_p1": val_p1}
        records.append(rec)
        log.info("epoch %d lr %.2e train %.4f val %.4f p1 %.2f mm", epoch, opt.lr,
                 rec["train_loss"], val_loss, val_p1)
        if out is not None:
            with open(out / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(rec) + "\n")
            if val_loss < best:
                best = val_loss
                save_checkpoint(model, out / "best.ckpt")
        opt.lr = sched.step(val_loss)
        if max_steps is not None and steps >= max_steps:
            break
    if out is not None:
        save_checkpoint(model, out / "final.ckpt")
    return TrainResult(model, records, steps)
