"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"PRNT" | u32 format version | u32 header length | header JSON (utf-8)
    | float32 payload

The header holds the run configuration, a manifest of ``(path, shape,
offset)`` entries (offsets in bytes from the start of the payload), and a
SHA-256 digest of the training log.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import DataIOError, UnsupportedCheckpoint

MAGIC = b"PRNT"
FORMAT_VERSION = 1


def log_digest(log) -> str:
    blob = json.dumps(log, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def to_bytes(params: dict, config: dict, training_log=None, digest: str = None) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for path in sorted(params):
        arr = np.ascontiguousarray(np.asarray(params[path].data, dtype="<f4"))
        manifest.append({"path": path, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "config": config,
        "manifest": manifest,
        "trainingLogDigest": digest or log_digest(training_log or []),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def from_bytes(blob: bytes):
    """Return ``(params, config, header)``."""
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise UnsupportedCheckpoint("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise UnsupportedCheckpoint(f"checkpoint format {version} is not supported "
                                    f"(expected {FORMAT_VERSION})")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    payload = memoryview(blob)[12 + hlen:]
    params = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + 4 * count > len(payload):
            raise UnsupportedCheckpoint(f"truncated payload for {entry['path']}")
        arr = np.frombuffer(payload[start:start + 4 * count], dtype="<f4").reshape(shape)
        params[entry["path"]] = Tensor(arr.astype(np.float32), requires_grad=True)
    return params, header["config"], header


def save(path, params: dict, config: dict, training_log=None, digest: str = None) -> None:
    try:
        Path(path).write_bytes(to_bytes(params, config, training_log, digest))
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(blob)
