"""Versioned binary checkpoint container.

Layout: magic "ECVQLAB1", a u32 manifest length, the UTF-8 manifest, then
raw little-endian float64 parameter blocks in manifest order. The manifest
is line-oriented key-value text:

    format 1
    kind ECVQCodec
    hyper lam 14.0
    param codebook 64,2

``hyper`` values are JSON-encoded; ``param`` lines carry the row-major
shape. The model checksum used by bitstreams is the first 8 bytes of the
SHA-256 of the serialized container.
"""

import hashlib
import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"ECVQLAB1"
FORMAT_VERSION = 1


def serialize(kind, hypers, params):
    """Build container bytes from named float64 arrays.

    ``params`` is an ordered list of (name, array).
    """
    lines = [f"format {FORMAT_VERSION}", f"kind {kind}"]
    for key in hypers:
        lines.append(f"hyper {key} {json.dumps(hypers[key])}")
    blocks = []
    for name, arr in params:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"param {name} {shape}")
        blocks.append(arr.tobytes())
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    return CHECKPOINT_MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(blocks)


def deserialize(buf):
    """Return (kind, hypers, params) with params as ordered (name, array)."""
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {buf[:8]!r}")
    (mlen,) = struct.unpack_from("<I", buf, 8)
    manifest = buf[12:12 + mlen].decode("utf-8")
    offset = 12 + mlen
    kind = None
    version = None
    hypers = {}
    params = []
    for line in manifest.splitlines():
        if not line.strip():
            continue
        tag, rest = line.split(" ", 1)
        if tag == "format":
            version = int(rest)
        elif tag == "kind":
            kind = rest
        elif tag == "hyper":
            key, value = rest.split(" ", 1)
            hypers[key] = json.loads(value)
        elif tag == "param":
            name, shape_s = rest.rsplit(" ", 1)
            shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split(","))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape)
            offset += n * 8
            params.append((name, arr.astype(np.float64)))
        else:
            raise ValueError(f"unknown manifest line {line!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {version}")
    if kind is None:
        raise ValueError("checkpoint manifest is missing its kind")
    if offset != len(buf):
        raise ValueError("checkpoint has trailing or missing parameter data")
    return kind, hypers, params


def checksum(buf):
    """8-byte model identity used to bind bitstreams to checkpoints."""
    return hashlib.sha256(buf).digest()[:8]


def save(path, kind, hypers, params):
    buf = serialize(kind, hypers, params)
    with open(path, "wb") as f:
        f.write(buf)
    return checksum(buf)


def load(path):
    with open(path, "rb") as f:
        return deserialize(f.read())
