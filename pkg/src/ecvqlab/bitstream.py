"""Length-framed bitstream container binding a payload to a model.

Layout: magic "ECVQBIT1" (8 bytes), model checksum (8 bytes), sample count
(u64 LE), source dimension (u32 LE), then the range-coded payload.
"""

import struct

from .errors import CorruptStreamError

BITSTREAM_MAGIC = b"ECVQBIT1"
_HEADER = struct.Struct("<8s8sQI")
HEADER_BYTES = _HEADER.size


def pack_bitstream(model_checksum, count, dim, payload):
    if len(model_checksum) != 8:
        raise ValueError("model checksum must be 8 bytes")
    return _HEADER.pack(BITSTREAM_MAGIC, model_checksum, count, dim) + payload


def unpack_bitstream(buf):
    """Return (model_checksum, count, dim, payload); validates framing."""
    if len(buf) < HEADER_BYTES:
        raise CorruptStreamError(f"stream shorter than header ({len(buf)} bytes)")
    magic, checksum, count, dim = _HEADER.unpack_from(buf)
    if magic != BITSTREAM_MAGIC:
        raise CorruptStreamError(f"bad magic {magic!r}")
    return checksum, count, dim, buf[HEADER_BYTES:]
