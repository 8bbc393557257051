"""Binary model checkpoints.

Layout, all little-endian:

    bytes 0-3    magic "FSKN"
    bytes 4-7    format version (u32, currently 1)
    bytes 8-11   layer count (u32)
    bytes 12-15  parameter count (u32, redundant; detects truncation)
    then         layer sizes, u32 each
    then         parameter values, float64 each, in shape-map order

File size is therefore 8 + 4 + 4 + 4 * n_layers + 8 * n_params.
Round-tripping is bit-exact because values are stored as raw float64.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .model import ModelSpec, ParamVector, shape_map_for

MAGIC = b"FSKN"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint data."""


def params_to_bytes(params: ParamVector, spec: ModelSpec) -> bytes:
    if len(params) != spec.n_params:
        raise CheckpointError(f"parameter vector has {len(params)} entries, "
                              f"spec {spec.layer_sizes} needs {spec.n_params}")
    sizes = spec.layer_sizes
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<III", VERSION, len(sizes), len(params)))
    out.write(struct.pack(f"<{len(sizes)}I", *sizes))
    out.write(np.ascontiguousarray(params.values, dtype="<f8").tobytes())
    return out.getvalue()


def params_from_bytes(data: bytes, spec: ModelSpec | None = None):
    """Decode a checkpoint. Returns (params, layer_sizes).

    When ``spec`` is given its layer sizes must match the stored ones.
    """
    if len(data) < 16:
        raise CheckpointError("checkpoint truncated before header")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, n_layers, n_params = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if n_layers < 2:
        raise CheckpointError(f"checkpoint claims {n_layers} layers, need >= 2")
    header_end = 16 + 4 * n_layers
    if len(data) < header_end:
        raise CheckpointError("checkpoint truncated inside layer sizes")
    sizes = struct.unpack_from(f"<{n_layers}I", data, 16)
    expected = sum((a + 1) * b for a, b in zip(sizes, sizes[1:]))
    if expected != n_params:
        raise CheckpointError(f"stored parameter count {n_params} does not "
                              f"match layer sizes {sizes} ({expected})")
    body = data[header_end:]
    if len(body) != 8 * n_params:
        raise CheckpointError(f"checkpoint body has {len(body)} bytes, "
                              f"expected {8 * n_params}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if spec is not None and tuple(sizes) != spec.layer_sizes:
        raise CheckpointError(f"checkpoint layers {tuple(sizes)} do not match "
                              f"spec {spec.layer_sizes}")
    return ParamVector(values, shape_map_for(sizes)), tuple(int(s) for s in sizes)


def save_checkpoint(path, params: ParamVector, spec: ModelSpec) -> None:
    blob = params_to_bytes(params, spec)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path, spec: ModelSpec | None = None):
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read(), spec)


def checkpoint_size(layer_sizes) -> int:
    """Exact file size in bytes for an architecture."""
    n_params = sum((a + 1) * b for a, b in zip(layer_sizes, layer_sizes[1:]))
    return 8 + 4 + 4 + 4 * len(layer_sizes) + 8 * n_params
