"""Binary checkpoints.

Layout (little-endian): magic ``PGN1``, u32 format version, u32 tensor
count, then per tensor: u16 name length, name bytes (utf-8), u8 ndim,
ndim x u32 dims, float32 data in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, PoseGraphNet
from .skeleton import SkeletonGraph

MAGIC = b"PGN1"
VERSION = 1

# config echo: stored as one-element tensors ahead of the parameters
CONFIG_KEYS = ("hidden", "n_joints", "dropout", "per_layer_adjacency", "output_scale", "row_degrees")


class CheckpointError(ValueError):
    pass


def model_tensors(model: PoseGraphNet) -> dict[str, np.ndarray]:
    cfg = model.config
    echo = {
        "hidden": cfg.hidden,
        "n_joints": model.n_joints,
        "dropout": cfg.dropout,
        "per_layer_adjacency": float(cfg.per_layer_adjacency),
        "output_scale": cfg.output_scale,
        "row_degrees": float(cfg.degree_mode == "row"),
    }
    tensors = {f"config.{k}": np.array([echo[k]], dtype=np.float64) for k in CONFIG_KEYS}
    tensors.update({k: p.data for k, p in model.named_parameters().items()})
    tensors.update(model.named_buffers())
    return tensors


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        name = f"#{i}"
        try:
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            if off + nlen > len(buf):
                raise struct.error("name")
            off += nlen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"truncated checkpoint: header of tensor '{name}' incomplete") from exc
        size = int(np.prod(dims, dtype=np.int64))
        end = off + 4 * size
        if end > len(buf):
            raise CheckpointError(f"truncated checkpoint: data of tensor '{name}' incomplete "
                                  f"(need {end - off} bytes, have {len(buf) - off})")
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float64)
        off = end
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after last tensor")
    return out


def save_checkpoint(model: PoseGraphNet, path) -> None:
    """Write ``model`` at 32-bit storage precision."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode(model_tensors(model)))


def load_checkpoint(path, skeleton: SkeletonGraph, hidden: int | None = None) -> PoseGraphNet:
    """Rebuild a model from ``path``; checks every tensor's dims against the
    model implied by ``skeleton`` and the stored config."""
    tensors = decode(Path(path).read_bytes())
    for key in CONFIG_KEYS:
        if f"config.{key}" not in tensors:
            raise CheckpointError(f"missing config tensor 'config.{key}'")
    echo = {k: float(tensors[f"config.{k}"][0]) for k in CONFIG_KEYS}
    stored_hidden = int(echo["hidden"])
    if hidden is not None and hidden != stored_hidden:
        raise CheckpointError(f"checkpoint hidden width {stored_hidden} does not match requested {hidden}")
    cfg = ModelConfig(hidden=stored_hidden, dropout=echo["dropout"],
                      per_layer_adjacency=bool(echo["per_layer_adjacency"]),
                      output_scale=echo["output_scale"],
                      degree_mode="row" if echo["row_degrees"] else "in_out")
    model = PoseGraphNet(skeleton, cfg)
    params = model.named_parameters()
    buffers = model.named_buffers()
    expected = {**{k: p.shape for k, p in params.items()}, **{k: b.shape for k, b in buffers.items()}}
    # parameter order puts the adjacency tensors first, so a joint-count
    # mismatch is reported against them
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor '{name}'")
        if tensors[name].shape != shape:
            raise CheckpointError(f"dim mismatch for tensor '{name}': file has {list(tensors[name].shape)}, "
                                  f"model expects {list(shape)}")
    unknown = set(tensors) - set(expected) - {f"config.{k}" for k in CONFIG_KEYS}
    if unknown:
        raise CheckpointError(f"unexpected tensor '{sorted(unknown)[0]}' in checkpoint")
    if int(echo["n_joints"]) != skeleton.n:
        raise CheckpointError(f"checkpoint was trained for {int(echo['n_joints'])} joints, skeleton has {skeleton.n}")
    for name, p in params.items():
        p.data[...] = tensors[name]
    for name in buffers:
        model.set_buffer(name, tensors[name])
    return model


def round_to_storage(model: PoseGraphNet) -> None:
    """Round all parameters and buffers to float32 values in place, so that a
    save/load round trip reproduces eval outputs bit-exactly."""
    for p in model.parameters():
        p.data[...] = p.data.astype(np.float32)
    for name, buf in model.named_buffers().items():
        model.set_buffer(name, buf.astype(np.float32))
