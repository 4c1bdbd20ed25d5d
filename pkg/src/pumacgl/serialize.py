"""Bit-exact array blobs and small JSON helpers shared by every file format."""

import base64
import hashlib
import json
import os
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class FormatError(ValueError):
    """A file on disk does not match the expected schema."""


def encode_f32(arr) -> str:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return base64.b64encode(arr.tobytes()).decode("ascii")


def decode_f32(blob: str, shape) -> np.ndarray:
    try:
        raw = base64.b64decode(blob.encode("ascii"), validate=True)
    except (ValueError, AttributeError) as exc:
        raise FormatError(f"invalid base64 blob: {exc}") from exc
    shape = tuple(int(s) for s in shape)
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(raw) != expected:
        raise FormatError(f"blob holds {len(raw)} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def digest(obj) -> str:
    """sha256 of the canonical JSON encoding of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj):
    # write-then-rename so readers never observe a half-written document
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=1))
    os.replace(tmp, path)


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def require(doc, *keys, where="document"):
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: expected an object")
    missing = [k for k in keys if k not in doc]
    if missing:
        raise FormatError(f"{where}: missing fields {missing}")
