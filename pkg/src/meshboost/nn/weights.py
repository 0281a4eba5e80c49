"""The ``.w3b`` weight file: a self-describing little-endian binary container.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"MBOOSTW3"
    8       4     u32    format version (currently 1)
    12      4     u32    descriptor length L
    16      L     utf-8  architecture descriptor, canonical JSON
    16+L    4     u32    tensor count T
    ...           T tensor records:
                    u16   name length n
                    n     utf-8 name
                    u8    dtype code (1 = f32, 2 = f64, 3 = i64)
                    u8    ndim d
                    4*d   u32 dims
                    ...   raw data, row-major
    end-4   4     u32    CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MBOOSTW3"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("int64"): 3}


class WeightsFormatError(ValueError):
    pass


@dataclass
class NetworkWeights:
    descriptor: dict
    tensors: dict = field(default_factory=dict)

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(json.loads(json.dumps(self.descriptor)),
                              {k: v.copy() for k, v in self.tensors.items()})


def _canonical(descriptor: dict) -> bytes:
    return json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_weights(weights: NetworkWeights) -> bytes:
    desc = _canonical(weights.descriptor)
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(desc)) + desc
    out += struct.pack("<I", len(weights.tensors))
    for name in sorted(weights.tensors):
        arr = np.asarray(weights.tensors[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"unsupported dtype {arr.dtype} for tensor {name}")
        raw_name = name.encode("utf-8")
        out += struct.pack("<H", len(raw_name)) + raw_name
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def decode_weights(data: bytes) -> NetworkWeights:
    if len(data) < 24 or data[:8] != MAGIC:
        raise WeightsFormatError("not a .w3b weight file (bad magic or too short)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise WeightsFormatError("checksum mismatch: file is truncated or corrupt")
    version, dlen = struct.unpack_from("<II", body, 8)
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weight format version {version}")
    pos = 16
    descriptor = json.loads(body[pos:pos + dlen].decode("utf-8"))
    pos += dlen
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(body):
                raise WeightsFormatError(f"tensor {name} runs past end of file")
            tensors[name] = np.frombuffer(body, dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise WeightsFormatError(f"malformed tensor record: {exc}") from None
    if pos != len(body):
        raise WeightsFormatError("trailing bytes after last tensor")
    return NetworkWeights(descriptor, tensors)


def save_weights(weights: NetworkWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_weights(weights))


def load_weights(path, expect: dict | None = None) -> NetworkWeights:
    """Read a weight file; if ``expect`` is given, every key in it must match the descriptor."""
    with open(path, "rb") as fh:
        weights = decode_weights(fh.read())
    if expect is not None:
        for key, value in expect.items():
            if weights.descriptor.get(key) != value:
                raise WeightsFormatError(
                    f"architecture mismatch on {key!r}: file has {weights.descriptor.get(key)!r}, expected {value!r}")
    return weights
