"""Binary container for model state.

A container holds named float32 tensors plus named JSON metadata records in
one little-endian file.  Writes are atomic (temp file + rename) and fully
deterministic: sections are sorted by name and JSON is serialized with sorted
keys, so save -> load -> save reproduces the file byte for byte.
"""

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"VXRY"
VERSION = 1

_KIND_TENSOR = 0
_KIND_JSON = 1


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"section name too long: {name[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def save_container(path, tensors: dict, meta: dict) -> None:
    """Write tensors (as float32) and JSON-serializable meta atomically."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors) + len(meta))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        parts.append(_pack_name(name))
        parts.append(struct.pack("<BB", _KIND_TENSOR, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    for name in sorted(meta):
        blob = json.dumps(meta[name], sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        parts.append(_pack_name(name))
        parts.append(struct.pack("<BI", _KIND_JSON, len(blob)))
        parts.append(blob)
    payload = b"".join(parts)

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError(f"truncated container: {self.path}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_container(path):
    """Read a container; returns (tensors, meta) dicts."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(4) != MAGIC:
        raise ValueError(f"not a model container: {path}")
    version, n_sections = reader.unpack("<II")
    if version > VERSION:
        raise ValueError(f"container version {version} is newer than supported "
                         f"({VERSION}): {path}")
    tensors, meta = {}, {}
    for _ in range(n_sections):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (kind,) = reader.unpack("<B")
        if kind == _KIND_TENSOR:
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(reader.take(4 * count), dtype="<f4")
            tensors[name] = data.reshape(shape).astype(np.float32)
        elif kind == _KIND_JSON:
            (blob_len,) = reader.unpack("<I")
            meta[name] = json.loads(reader.take(blob_len).decode("utf-8"))
        else:
            raise ValueError(f"unknown section kind {kind} in {path}")
    if reader.pos != len(reader.blob):
        raise ValueError(f"trailing bytes in container: {path}")
    return tensors, meta
