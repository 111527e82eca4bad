"""Synthetic 2D/3D pose pairs from forward kinematics and a pinhole camera.

Poses are built in a body frame (x to the subject's left, y up, z forward),
rotated into the camera frame (x right, y down, z forward) and projected.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .data import PoseSample
from .skeleton import SkeletonGraph, default_skeleton

# mm, roughly Human3.6M subject averages
BONE_LENGTHS = {
    "RHip": 132.0, "RKnee": 442.0, "RFoot": 454.0,
    "LHip": 132.0, "LKnee": 442.0, "LFoot": 454.0,
    "Spine": 233.0, "Thorax": 257.0, "Neck": 121.0, "Head": 115.0,
    "LShoulder": 151.0, "LElbow": 278.0, "LWrist": 251.0,
    "RShoulder": 151.0, "RElbow": 278.0, "RWrist": 251.0,
}

# rest-pose bone directions in the body frame: standing, arms hanging
BONE_DIRECTIONS = {
    "RHip": (-1, 0, 0), "RKnee": (0, -1, 0), "RFoot": (0, -1, 0),
    "LHip": (1, 0, 0), "LKnee": (0, -1, 0), "LFoot": (0, -1, 0),
    "Spine": (0, 1, 0), "Thorax": (0, 1, 0), "Neck": (0, 1, 0), "Head": (0, 1, 0),
    "LShoulder": (1, 0, 0), "LElbow": (0, -1, 0), "LWrist": (0, -1, 0),
    "RShoulder": (-1, 0, 0), "RElbow": (0, -1, 0), "RWrist": (0, -1, 0),
}

# body frame -> camera frame when the subject faces the camera
BODY_TO_CAMERA = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class CameraModel:
    focal: float = 1145.0
    cx: float = 512.0
    cy: float = 515.0
    image_width: int = 1000
    image_height: int = 1002

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")

    def project(self, points3d: np.ndarray) -> np.ndarray:
        p = np.asarray(points3d, dtype=np.float64)
        z = p[..., 2]
        return np.stack([self.focal * p[..., 0] / z + self.cx,
                         self.focal * p[..., 1] / z + self.cy], axis=-1)


def load_joint_limits() -> dict[str, dict[str, tuple[float, float]]]:
    raw = json.loads(resources.files("posegraphnet.resources").joinpath("joint_limits.json").read_text())
    return {k: {ax: tuple(v[ax]) for ax in "xyz"} for k, v in raw.items() if not k.startswith("_")}


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def euler_xyz(x, y, z) -> np.ndarray:
    return _rx(x) @ _ry(y) @ _rz(z)


def bone_offsets(skeleton: SkeletonGraph) -> np.ndarray:
    offsets = np.zeros((skeleton.n, 3))
    for i, name in enumerate(skeleton.names):
        if i == skeleton.root_index:
            continue
        if name not in BONE_LENGTHS:
            raise ValueError(f"no bone length for joint '{name}'")
        offsets[i] = np.asarray(BONE_DIRECTIONS[name], dtype=float) * BONE_LENGTHS[name]
    return offsets


def forward_kinematics(skeleton: SkeletonGraph, offsets: np.ndarray,
                       local_rot: np.ndarray, global_rot: np.ndarray) -> np.ndarray:
    """Joint positions relative to the root. ``local_rot[j]`` rotates the bones
    leaving joint ``j``."""
    n = skeleton.n
    pos = np.zeros((n, 3))
    orient = np.zeros((n, 3, 3))
    root = skeleton.root_index
    orient[root] = global_rot @ local_rot[root]
    depth = skeleton.depth()
    for j in sorted(range(n), key=lambda k: depth[k]):
        p = skeleton.parents[j]
        if p is None:
            continue
        pos[j] = pos[p] + orient[p] @ offsets[j]
        orient[j] = orient[p] @ local_rot[j]
    return pos


def sample_local_rotations(skeleton, limits, rng) -> np.ndarray:
    rots = np.tile(np.eye(3), (skeleton.n, 1, 1))
    for j, name in enumerate(skeleton.names):
        lim = limits.get(name)
        if lim is None:
            continue
        angles = [np.deg2rad(rng.uniform(*lim[ax])) for ax in "xyz"]
        rots[j] = euler_xyz(*angles)
    return rots


def generate_synthetic(n: int, seed: int = 0, camera: CameraModel | None = None,
                       skeleton: SkeletonGraph | None = None,
                       depth_range=(3000.0, 6000.0), margin: float = 10.0) -> list[PoseSample]:
    if n <= 0:
        raise ValueError(f"need n > 0 samples, got {n}")
    camera = camera or CameraModel()
    skeleton = skeleton or default_skeleton()
    limits = load_joint_limits()
    offsets = bone_offsets(skeleton)
    rng = np.random.default_rng(seed)
    samples = []
    while len(samples) < n:
        local = sample_local_rotations(skeleton, limits, rng)
        yaw = rng.uniform(-np.pi, np.pi)
        tilt = np.deg2rad(rng.uniform(-10, 10, size=2))
        global_rot = BODY_TO_CAMERA @ _ry(yaw) @ _rx(tilt[0]) @ _rz(tilt[1])
        rel = forward_kinematics(skeleton, offsets, local, global_rot)
        depth = rng.uniform(*depth_range)
        # lateral offset drawn within the view cone at that depth
        half_w = 0.25 * depth * camera.image_width / camera.focal
        half_h = 0.15 * depth * camera.image_height / camera.focal
        trans = np.array([rng.uniform(-half_w, half_w), rng.uniform(-half_h, half_h), depth])
        pose3d = rel + trans
        if np.any(pose3d[:, 2] < 100.0):
            continue
        pose2d = camera.project(pose3d)
        if (np.any(pose2d < margin) or np.any(pose2d[:, 0] > camera.image_width - margin)
                or np.any(pose2d[:, 1] > camera.image_height - margin)):
            continue
        samples.append(PoseSample(pose2d, pose3d, float(camera.image_width), float(camera.image_height),
                                  subject="synthetic", action=None, camera="synth0"))
    return samples


def bone_lengths(skeleton: SkeletonGraph, pose3d: np.ndarray) -> np.ndarray:
    return np.array([np.linalg.norm(pose3d[c] - pose3d[p]) for c, p in skeleton.edges()])
