"""Versioned single-file weight container.

Layout::

    b"COSCOVCK"                       8-byte magic
    uint64 LE                         manifest length in bytes (padding included)
    manifest                          UTF-8 JSON, space-padded to a multiple of 8
    blob                              little-endian float tensors, 8-byte aligned

The manifest holds ``format_version``, the model ``config``, a ``tensors``
directory of ``name -> {shape, offset, dtype}`` (offsets relative to the
blob start) and the blob's SHA-256. Writing is deterministic: the same
weights and config always give the same bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError, ConfigError
from .model import Model, ModelConfig, build

MAGIC = b"COSCOVCK"
FORMAT_VERSION = 1
_ALIGN = 8


def _pad(n: int) -> int:
    return (-n) % _ALIGN


def to_bytes(model: Model, extra: dict[str, Any] | None = None) -> bytes:
    tensors = {}
    chunks = []
    offset = 0
    for name, t in model.named_parameters():
        dt = "<f8" if t.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(t.data, dtype=dt).tobytes()
        tensors[name] = {"shape": list(t.shape), "offset": offset, "dtype": dt}
        chunks.append(raw + b"\0" * _pad(len(raw)))
        offset += len(chunks[-1])
    blob = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "tensors": tensors,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    if extra:
        manifest["extra"] = extra
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    text += b" " * _pad(len(text))
    return MAGIC + struct.pack("<Q", len(text)) + text + blob


def save_checkpoint(path, model: Model, extra: dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, extra))


def read_manifest(data: bytes) -> tuple[dict[str, Any], bytes]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a coscov checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    if 16 + n > len(data):
        raise CheckpointError("checkpoint truncated inside the manifest")
    try:
        manifest = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint manifest is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format_version {version} is not supported "
                              f"(this build reads version {FORMAT_VERSION})")
    return manifest, data[16 + n:]


def from_bytes(data: bytes) -> Model:
    manifest, blob = read_manifest(data)
    if len(blob) != manifest.get("blob_bytes") or hashlib.sha256(blob).hexdigest() != manifest.get("blob_sha256"):
        raise CheckpointError("checkpoint blob is corrupted (size or checksum mismatch)")
    try:
        model = build(ModelConfig.from_dict(manifest["config"]))
    except ConfigError as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}") from exc
    state = {}
    for name, meta in manifest["tensors"].items():
        dt = np.dtype(meta["dtype"])
        count = int(np.prod(meta["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=meta["offset"])
        state[name] = arr.reshape(meta["shape"])
    try:
        model.load_state_dict(state)
    except ConfigError as exc:
        raise CheckpointError(str(exc)) from exc
    return model


def load_checkpoint(path) -> Model:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(data)
