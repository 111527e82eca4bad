"""MPJPE under root alignment (protocol 1) and Procrustes alignment (protocol 2)."""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, stack_inputs, stack_targets
from .tensor import svd3

log = logging.getLogger(__name__)


class AlignmentError(ValueError):
    pass


@dataclass
class RigidTransform:
    rotation: np.ndarray
    scale: float
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def _non_root(n: int, root_index: int) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[root_index] = False
    return mask


def joint_errors_p1(pred, gt, root_index: int) -> np.ndarray:
    """Per-joint distances after root alignment, root included (always 0 for
    exact root alignment). Works on [N,3] or [B,N,3]."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    p = pred - pred[..., root_index:root_index + 1, :]
    g = gt - gt[..., root_index:root_index + 1, :]
    return np.linalg.norm(p - g, axis=-1)


def mpjpe_p1(pred, gt, root_index: int) -> float:
    err = joint_errors_p1(pred, gt, root_index)
    return float(err[..., _non_root(err.shape[-1], root_index)].mean())


def procrustes_align(pred, gt, with_scale: bool = True) -> tuple[RigidTransform, np.ndarray]:
    """Least-squares similarity (or rigid, without scale) mapping ``pred`` onto ``gt``."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    x0, y0 = x - mu_x, y - mu_y
    norm_x = float(np.sum(x0 * x0))
    if norm_x <= 1e-24 * max(1.0, float(np.sum(x * x))):
        raise AlignmentError("cannot align: all predicted points coincide")
    u, s, v = svd3(x0.T @ y0)
    d = np.ones(3)
    if np.linalg.det(v @ u.T) < 0:
        # reflection: flip the weakest singular direction
        d[2] = -1.0
    r = (v * d) @ u.T
    sc = float(np.sum(s * d) / norm_x) if with_scale else 1.0
    t = mu_y - sc * r @ mu_x
    tf = RigidTransform(r, sc, t)
    return tf, tf.apply(x)


def mpjpe_p2(pred, gt, root_index: int, with_scale: bool = True) -> float:
    return float(joint_errors_p2(pred, gt, root_index, with_scale)[_non_root(len(pred), root_index)].mean())


def joint_errors_p2(pred, gt, root_index: int, with_scale: bool = True) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    p = pred - pred[root_index]
    g = gt - gt[root_index]
    _, aligned = procrustes_align(p, g, with_scale)
    return np.linalg.norm(aligned - g, axis=-1)


def _p2_or_collapsed(pred, gt, root_index, with_scale):
    try:
        return joint_errors_p2(pred, gt, root_index, with_scale)
    except AlignmentError:
        # a prediction collapsed to one point: the best similarity sends it to the gt centroid
        log.warning("degenerate prediction; scoring protocol 2 against the ground-truth centroid")
        g = gt - gt[root_index]
        return np.linalg.norm(g - g.mean(axis=0), axis=-1)


@dataclass
class EvalReport:
    mpjpe_p1_mm: float
    mpjpe_p2_mm: float
    per_joint_mm: dict[str, float]
    per_axis_mm: dict[str, float]
    per_action_mm: dict[str, float] = field(default_factory=dict)
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "mpjpe_p1_mm": self.mpjpe_p1_mm,
            "mpjpe_p2_mm": self.mpjpe_p2_mm,
            "per_joint_mm": self.per_joint_mm,
            "per_axis_mm": self.per_axis_mm,
            "per_action_mm": self.per_action_mm,
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def report_from_predictions(pred: np.ndarray, gt: np.ndarray, names, root_index: int,
                            actions=None, with_scale: bool = True) -> EvalReport:
    """Aggregate both protocols over a batch of [B,N,3] predictions."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    keep = _non_root(pred.shape[1], root_index)
    e1 = joint_errors_p1(pred, gt, root_index)[:, keep]
    e2 = np.stack([_p2_or_collapsed(p, g, root_index, with_scale) for p, g in zip(pred, gt)])[:, keep]
    p = pred - pred[:, root_index:root_index + 1]
    g = gt - gt[:, root_index:root_index + 1]
    axis = np.abs(p - g)[:, keep].mean(axis=(0, 1))
    kept_names = [n for n, k in zip(names, keep) if k]
    per_joint = dict(sorted(zip(kept_names, e1.mean(axis=0).tolist()), key=lambda kv: kv[1]))
    per_action = {}
    if actions is not None and any(a is not None for a in actions):
        groups = defaultdict(list)
        for i, a in enumerate(actions):
            if a is not None:
                groups[a].append(i)
        per_action = {a: float(e1[idx].mean()) for a, idx in sorted(groups.items())}
    return EvalReport(
        mpjpe_p1_mm=float(e1.mean()),
        mpjpe_p2_mm=float(e2.mean()),
        per_joint_mm=per_joint,
        per_axis_mm=dict(zip("xyz", axis.tolist())),
        per_action_mm=per_action,
        n_samples=len(pred),
    )


def predict_dataset(model, samples, batch_size: int = 256) -> np.ndarray:
    x = stack_inputs(samples)
    return np.concatenate([model.predict(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])


def evaluate(model, samples, batch_size: int = 256, with_scale: bool = True) -> EvalReport:
    if not samples:
        raise DataError("cannot evaluate an empty dataset")
    sk = model.skeleton
    gt = stack_targets(samples, sk.root_index)
    pred = predict_dataset(model, samples, batch_size)
    return report_from_predictions(pred, gt, sk.names, sk.root_index,
                                   [s.action for s in samples], with_scale)
