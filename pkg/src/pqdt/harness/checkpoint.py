"""Checkpoint files.

Layout::

    b"PQCK" | u32 LE format version | u32 LE header length | header | payloads

The header is compact UTF-8 JSON with sorted keys. It lists every tensor as
``{name, shape, dtype, offset, nbytes}`` (offsets relative to the first
payload byte) and carries a free-form ``meta`` object. Payloads are raw
little-endian arrays in header order. Encoding is canonical, so
load -> save reproduces the input bytes exactly.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PQCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")
DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    dtypes: dict[str, str] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, name: str, value, dtype: str = "f4") -> None:
        if dtype not in DTYPES:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {dtype!r}")
        self.tensors[name] = np.ascontiguousarray(value, dtype=DTYPES[dtype])
        self.dtypes[name] = dtype

    def to_bytes(self) -> bytes:
        entries, blobs, offset = [], [], 0
        for name in sorted(self.tensors):
            dtype = self.dtypes.get(name, "f4")
            arr = np.ascontiguousarray(self.tensors[name], dtype=DTYPES[dtype])
            blob = arr.tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                            "offset": offset, "nbytes": len(blob)})
            blobs.append(blob)
            offset += len(blob)
        header = json.dumps({"meta": self.meta, "tensors": entries}, sort_keys=True,
                            separators=(",", ":"), allow_nan=False).encode("utf-8")
        return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(blobs)

    @classmethod
    def from_bytes(cls, buf: bytes, source: str = "<bytes>") -> "Checkpoint":
        if len(buf) < _PREFIX.size:
            raise CheckpointError(f"{source}: truncated prefix ({len(buf)} bytes)")
        magic, version, hlen = _PREFIX.unpack_from(buf, 0)
        if magic != MAGIC:
            raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{source}: format version {version}, this build reads {FORMAT_VERSION}")
        start = _PREFIX.size + hlen
        if len(buf) < start:
            raise CheckpointError(f"{source}: header of {hlen} bytes runs past end of file")
        try:
            header = json.loads(buf[_PREFIX.size:start].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{source}: unreadable header ({exc})") from None
        ck = cls(meta=header.get("meta", {}))
        expected = 0
        for e in header["tensors"]:
            dtype = e["dtype"]
            if dtype not in DTYPES:
                raise CheckpointError(f"{source}: tensor {e['name']!r} has unknown dtype {dtype!r}")
            n = int(np.prod(e["shape"], dtype=np.int64)) * np.dtype(DTYPES[dtype]).itemsize
            if e["offset"] != expected or e["nbytes"] != n:
                raise CheckpointError(f"{source}: tensor {e['name']!r} has inconsistent offset/size")
            lo = start + e["offset"]
            if lo + n > len(buf):
                raise CheckpointError(f"{source}: tensor {e['name']!r} payload truncated")
            arr = np.frombuffer(buf, dtype=DTYPES[dtype], count=n // np.dtype(DTYPES[dtype]).itemsize,
                                offset=lo).reshape(e["shape"]).copy()
            ck.tensors[e["name"]] = arr
            ck.dtypes[e["name"]] = dtype
            expected += n
        if start + expected != len(buf):
            raise CheckpointError(f"{source}: {len(buf) - start - expected} unexpected trailing bytes")
        return ck

    def save(self, path) -> Path:
        """Atomic write: a temporary sibling is renamed over ``path``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), str(path))


def model_checkpoint(model, digest: str, dtype: str = "f8", meta: dict | None = None) -> Checkpoint:
    ck = Checkpoint(meta={"config_digest": digest, "network": model.cfg.to_dict(), **(meta or {})})
    for name, value in model.state_dict().items():
        ck.add(f"model.{name}", value, dtype)
    return ck


def load_model_weights(model, ck: Checkpoint, digest: str) -> None:
    found = ck.meta.get("config_digest")
    if found != digest:
        raise CheckpointError(f"checkpoint was written for network config {str(found)[:12]}, "
                              f"current config is {digest[:12]}")
    state = {k[len("model."):]: v.astype(np.float64) for k, v in ck.tensors.items() if k.startswith("model.")}
    model.load_state_dict(state)
