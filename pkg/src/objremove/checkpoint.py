"""Single-file versioned checkpoint container.

Layout: MAGIC | u32 format version | u32 header length | JSON header | torch payload.
The header records the model kind, configs, step and the payload's length and
SHA-256, so truncation or corruption is detected before anything is deserialized.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import torch

MAGIC = b"OBJRMCK\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<II")


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def save_container(path, kind: str, header: dict, payload: dict) -> Path:
    """Atomically write ``payload`` (tensors, nested dicts) under a JSON ``header``."""
    buf = io.BytesIO()
    torch.save(payload, buf)
    body = buf.getvalue()
    head = dict(header, kind=kind, payload_bytes=len(body),
                payload_sha256=hashlib.sha256(body).hexdigest())
    head_bytes = json.dumps(head, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC + _PREFIX.pack(FORMAT_VERSION, len(head_bytes)) + head_bytes + body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_header(path) -> tuple[dict, bytes]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    n = len(MAGIC) + _PREFIX.size
    if len(blob) < n or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, head_len = _PREFIX.unpack(blob[len(MAGIC):n])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path} has checkpoint format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(blob[n:n + head_len])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    return header, blob[n + head_len:]


def load_container(path, kind: str | None = None) -> tuple[dict, dict]:
    header, body = read_header(path)
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {header.get('kind')!r} model, expected {kind!r}")
    if len(body) != header["payload_bytes"] or hashlib.sha256(body).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload truncated or corrupt")
    payload = torch.load(io.BytesIO(body), map_location="cpu", weights_only=False)
    return header, payload
