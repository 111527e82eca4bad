"""Pose samples, coordinate conventions and the JSON-lines dataset format."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .skeleton import SkeletonGraph

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


@dataclass
class PoseSample:
    pose2d: np.ndarray  # [N, 2] pixels
    pose3d: np.ndarray | None  # [N, 3] mm, camera frame
    image_width: float
    image_height: float
    subject: str | None = None
    action: str | None = None
    camera: str | None = None

    def to_record(self) -> dict:
        rec = {"pose2d": self.pose2d.tolist()}
        if self.pose3d is not None:
            rec["pose3d"] = self.pose3d.tolist()
        rec["image_width"] = self.image_width
        rec["image_height"] = self.image_height
        for key in ("subject", "action", "camera"):
            if getattr(self, key) is not None:
                rec[key] = getattr(self, key)
        return rec


def normalize_2d(pose2d, image_width: float, image_height: float) -> np.ndarray:
    """Map pixels so the image width spans [-1, 1]; y uses the same scale so
    the aspect ratio is kept."""
    if image_width <= 0:
        raise DataError(f"image width must be positive, got {image_width}")
    p = np.asarray(pose2d, dtype=np.float64)
    out = np.empty_like(p)
    out[..., 0] = 2.0 * p[..., 0] / image_width - 1.0
    out[..., 1] = (2.0 * p[..., 1] - image_height) / image_width
    return out


def denormalize_2d(norm2d, image_width: float, image_height: float) -> np.ndarray:
    p = np.asarray(norm2d, dtype=np.float64)
    out = np.empty_like(p)
    out[..., 0] = (p[..., 0] + 1.0) * image_width / 2.0
    out[..., 1] = (p[..., 1] * image_width + image_height) / 2.0
    return out


def root_center_3d(pose3d, root_index: int) -> np.ndarray:
    p = np.asarray(pose3d, dtype=np.float64)
    return p - p[..., root_index:root_index + 1, :]


def _array(rec, key, shape, lineno):
    try:
        arr = np.asarray(rec[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: field '{key}' is not numeric: {exc}") from exc
    if arr.ndim != 2 or arr.shape[1] != shape[1]:
        raise ParseError(f"line {lineno}: field '{key}' must be a list of {shape[1]}-vectors")
    if arr.shape[0] != shape[0]:
        raise SchemaError(f"line {lineno}: field '{key}' has {arr.shape[0]} joints, skeleton has {shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"line {lineno}: field '{key}' contains non-finite values")
    return arr


def parse_record(line: str, n_joints: int, lineno: int = 1, require_3d: bool = True) -> PoseSample:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict):
        raise ParseError(f"line {lineno}: record must be a JSON object")
    for key in ("pose2d", "image_width", "image_height"):
        if key not in rec:
            raise ParseError(f"line {lineno}: missing field '{key}'")
    if require_3d and "pose3d" not in rec:
        raise ParseError(f"line {lineno}: missing field 'pose3d' (needed for training/evaluation)")
    pose2d = _array(rec, "pose2d", (n_joints, 2), lineno)
    pose3d = _array(rec, "pose3d", (n_joints, 3), lineno) if "pose3d" in rec else None
    try:
        width, height = float(rec["image_width"]), float(rec["image_height"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: image size is not numeric") from exc
    if width <= 0 or height <= 0:
        raise ParseError(f"line {lineno}: image size must be positive")
    lo, hi = np.zeros(2), np.array([width, height])
    if np.any(pose2d < lo) or np.any(pose2d > hi):
        log.warning("line %d: 2D pose outside the %gx%g image, clamping", lineno, width, height)
        pose2d = np.clip(pose2d, lo, hi)
    return PoseSample(pose2d, pose3d, width, height,
                      rec.get("subject"), rec.get("action"), rec.get("camera"))


def load_dataset(path, skeleton: SkeletonGraph, require_3d: bool = True) -> list[PoseSample]:
    """Read a JSON-lines pose file. With ``require_3d=False`` records lacking
    ``pose3d`` are accepted (inference input)."""
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            samples.append(parse_record(line, skeleton.n, lineno, require_3d))
    return samples


def save_dataset(samples, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record()) + "\n")


def stack_inputs(samples) -> np.ndarray:
    return np.stack([normalize_2d(s.pose2d, s.image_width, s.image_height) for s in samples])


def stack_targets(samples, root_index: int) -> np.ndarray:
    missing = [i for i, s in enumerate(samples) if s.pose3d is None]
    if missing:
        raise DataError(f"sample {missing[0]} has no 3D ground truth")
    return np.stack([root_center_3d(s.pose3d, root_index) for s in samples])
