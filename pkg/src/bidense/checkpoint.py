"""Bit-exact binary checkpoints.

Layout (all integers 32-bit little-endian unsigned):

    magic "DBDN" | format version | variant tag, blocks, layers, n_r, n_g,
    scale | then per parameter in canonical build order: name length +
    UTF-8 name, rank, dims, raw little-endian float32 payload.

The loader rebuilds the network from the stored config and verifies every
name and shape against it before accepting the payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, Network, Variant, build_network

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"DBDN"
VERSION = 1

_VARIANT_TAGS = {
    Variant.DBDN: 0,
    Variant.DBDN_PLUS: 1,
    Variant.WO_INTER: 2,
    Variant.WO_COMP: 3,
}
_TAG_VARIANTS = {tag: v for v, tag in _VARIANT_TAGS.items()}


class CheckpointError(ValueError):
    """Raised when a checkpoint is malformed or disagrees with its config."""


def _logical_dims(name: str, data: np.ndarray) -> tuple[int, ...]:
    # biases are stored broadcast-shaped in memory but serialized as rank 1
    if name.endswith(".bias"):
        return (data.shape[1],)
    return data.shape


def save_checkpoint(path, net: Network) -> Path:
    path = Path(path)
    cfg = net.config
    if cfg.concat_extraction:
        raise CheckpointError(
            "checkpoint format carries no field for concat_extraction; "
            "only the default wiring can round-trip"
        )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<6I", _VARIANT_TAGS[cfg.variant], cfg.blocks,
                            cfg.layers, cfg.n_r, cfg.n_g, cfg.scale))
        for name, tensor in net.parameters():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            dims = _logical_dims(name, tensor.data)
            f.write(struct.pack("<I", len(dims)))
            f.write(struct.pack(f"<{len(dims)}I", *dims))
            f.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return path


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> Network:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported format version {version}")
        tag, blocks, layers, n_r, n_g, scale = struct.unpack(
            "<6I", _read_exact(f, 24, "config"))
        if tag not in _TAG_VARIANTS:
            raise CheckpointError(f"unknown variant tag {tag}")
        cfg = ModelConfig(variant=_TAG_VARIANTS[tag], blocks=blocks, layers=layers,
                          n_r=n_r, n_g=n_g, scale=scale)
        net = build_network(cfg, rng_seed=0)
        for expected_name, tensor in net.parameters():
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            if name != expected_name:
                raise CheckpointError(
                    f"parameter order mismatch: found {name!r}, expected {expected_name!r}"
                )
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
            expected_dims = _logical_dims(name, tensor.data)
            if tuple(dims) != tuple(expected_dims):
                raise CheckpointError(
                    f"{name}: stored shape {dims} does not match config shape "
                    f"{tuple(expected_dims)}"
                )
            count = int(np.prod(dims))
            payload = _read_exact(f, 4 * count, f"payload of {name}")
            values = np.frombuffer(payload, dtype="<f4").reshape(tensor.data.shape)
            # frombuffer arrays are read-only; training mutates params in place
            tensor.data = values.astype(np.float32, copy=True)
        if f.read(1):
            raise CheckpointError("trailing bytes after final parameter")
    return net
