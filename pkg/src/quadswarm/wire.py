"""Self-describing binary encoding for inter-agent payloads.

One version byte, then a single tagged value. Supported values: None,
bools, 64-bit ints, doubles, strings, bytes, lists, string/scalar-keyed
maps and 1-D float64 vectors (numpy arrays). Encoding is deterministic, so
byte payloads can be compared and hashed in tests.
"""

from __future__ import annotations

import struct

import numpy as np

WIRE_VERSION = 1

_T_NONE = 0x00
_T_FALSE = 0x01
_T_TRUE = 0x02
_T_INT = 0x03
_T_FLOAT = 0x04
_T_STR = 0x05
_T_BYTES = 0x06
_T_LIST = 0x07
_T_MAP = 0x08
_T_VEC = 0x09

_INT64_MIN = -(1 << 63)
_INT64_MAX = (1 << 63) - 1


class EncodeError(Exception):
    pass


class DecodeError(Exception):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _encode_into(value, out: bytearray) -> None:
    if value is None:
        out.append(_T_NONE)
    elif value is True:
        out.append(_T_TRUE)
    elif value is False:
        out.append(_T_FALSE)
    elif isinstance(value, int):
        if not (_INT64_MIN <= value <= _INT64_MAX):
            raise EncodeError(f"integer out of 64-bit range: {value}")
        out.append(_T_INT)
        out += struct.pack(">q", value)
    elif isinstance(value, float):
        out.append(_T_FLOAT)
        out += struct.pack(">d", value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(_T_STR)
        out += struct.pack(">I", len(raw))
        out += raw
    elif isinstance(value, (bytes, bytearray)):
        out.append(_T_BYTES)
        out += struct.pack(">I", len(value))
        out += value
    elif isinstance(value, np.ndarray):
        if value.ndim != 1:
            raise EncodeError(f"only 1-D arrays are encodable, got ndim={value.ndim}")
        arr = np.ascontiguousarray(value, dtype=">f8")
        out.append(_T_VEC)
        out += struct.pack(">I", len(arr))
        out += arr.tobytes()
    elif isinstance(value, list):
        out.append(_T_LIST)
        out += struct.pack(">I", len(value))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        out.append(_T_MAP)
        out += struct.pack(">I", len(value))
        for key, item in value.items():
            if not (key is None or isinstance(key, (bool, int, float, str, bytes))):
                raise EncodeError(f"map keys must be scalars, got {type(key).__name__}")
            _encode_into(key, out)
            _encode_into(item, out)
    else:
        raise EncodeError(f"unsupported type: {type(value).__name__}")


def serialize(value) -> bytes:
    out = bytearray([WIRE_VERSION])
    _encode_into(value, out)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"truncated: wanted {n} bytes", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def read_value(self):
        start = self.pos
        tag = self.take(1)[0]
        if tag == _T_NONE:
            return None
        if tag == _T_TRUE:
            return True
        if tag == _T_FALSE:
            return False
        if tag == _T_INT:
            return struct.unpack(">q", self.take(8))[0]
        if tag == _T_FLOAT:
            return struct.unpack(">d", self.take(8))[0]
        if tag == _T_STR:
            (n,) = struct.unpack(">I", self.take(4))
            raw = self.take(n)
            try:
                return raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise DecodeError(f"invalid utf-8: {exc}", start) from exc
        if tag == _T_BYTES:
            (n,) = struct.unpack(">I", self.take(4))
            return self.take(n)
        if tag == _T_VEC:
            (n,) = struct.unpack(">I", self.take(4))
            raw = self.take(8 * n)
            return np.frombuffer(raw, dtype=">f8").astype(np.float64)
        if tag == _T_LIST:
            (n,) = struct.unpack(">I", self.take(4))
            return [self.read_value() for _ in range(n)]
        if tag == _T_MAP:
            (n,) = struct.unpack(">I", self.take(4))
            out = {}
            for _ in range(n):
                key = self.read_value()
                out[key] = self.read_value()
            return out
        raise DecodeError(f"unknown tag 0x{tag:02x}", start)


def deserialize(data: bytes):
    reader = _Reader(data)
    version = reader.take(1)[0]
    if version != WIRE_VERSION:
        raise DecodeError(f"unsupported wire version {version}", 0)
    value = reader.read_value()
    if reader.pos != len(data):
        raise DecodeError(f"{len(data) - reader.pos} trailing bytes", reader.pos)
    return value
