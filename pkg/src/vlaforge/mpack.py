"""Canonical MessagePack encoding/decoding (no external dependency).

Canonical rules, mirrored bit-for-bit by the foreign client:
  * map keys keep insertion order; shortest container header (fixmap/map16/map32)
  * str/bin/array use the shortest header that fits
  * ints use the shortest signed-or-unsigned form (positive fixint, uint8..64,
    negative fixint, int8..64)
  * every Python float encodes as float64 (0xcb)

The decoder accepts the full integer/float families so foreign encoders that
make other width choices still parse.
"""

from __future__ import annotations

import struct

from .errors import FormatError


def packb(obj) -> bytes:
    out = bytearray()
    _pack(obj, out)
    return bytes(out)


def _pack(obj, out: bytearray) -> None:
    if obj is None:
        out.append(0xC0)
    elif obj is True:
        out.append(0xC3)
    elif obj is False:
        out.append(0xC2)
    elif isinstance(obj, int) and not isinstance(obj, bool):
        _pack_int(obj, out)
    elif isinstance(obj, float):
        out.append(0xCB)
        out += struct.pack(">d", obj)
    elif isinstance(obj, str):
        data = obj.encode("utf-8")
        n = len(data)
        if n <= 31:
            out.append(0xA0 | n)
        elif n <= 0xFF:
            out += struct.pack(">BB", 0xD9, n)
        elif n <= 0xFFFF:
            out += struct.pack(">BH", 0xDA, n)
        else:
            out += struct.pack(">BI", 0xDB, n)
        out += data
    elif isinstance(obj, (bytes, bytearray, memoryview)):
        data = bytes(obj)
        n = len(data)
        if n <= 0xFF:
            out += struct.pack(">BB", 0xC4, n)
        elif n <= 0xFFFF:
            out += struct.pack(">BH", 0xC5, n)
        else:
            out += struct.pack(">BI", 0xC6, n)
        out += data
    elif isinstance(obj, (list, tuple)):
        n = len(obj)
        if n <= 15:
            out.append(0x90 | n)
        elif n <= 0xFFFF:
            out += struct.pack(">BH", 0xDC, n)
        else:
            out += struct.pack(">BI", 0xDD, n)
        for item in obj:
            _pack(item, out)
    elif isinstance(obj, dict):
        n = len(obj)
        if n <= 15:
            out.append(0x80 | n)
        elif n <= 0xFFFF:
            out += struct.pack(">BH", 0xDE, n)
        else:
            out += struct.pack(">BI", 0xDF, n)
        for key, value in obj.items():
            _pack(key, out)
            _pack(value, out)
    else:
        raise FormatError(f"cannot msgpack-encode {type(obj).__name__}")


def _pack_int(v: int, out: bytearray) -> None:
    if 0 <= v <= 0x7F:
        out.append(v)
    elif -32 <= v < 0:
        out.append(v & 0xFF)
    elif 0 <= v <= 0xFF:
        out += struct.pack(">BB", 0xCC, v)
    elif 0 <= v <= 0xFFFF:
        out += struct.pack(">BH", 0xCD, v)
    elif 0 <= v <= 0xFFFFFFFF:
        out += struct.pack(">BI", 0xCE, v)
    elif 0 <= v <= 0xFFFFFFFFFFFFFFFF:
        out += struct.pack(">BQ", 0xCF, v)
    elif -0x80 <= v < 0:
        out += struct.pack(">Bb", 0xD0, v)
    elif -0x8000 <= v < 0:
        out += struct.pack(">Bh", 0xD1, v)
    elif -0x80000000 <= v < 0:
        out += struct.pack(">Bi", 0xD2, v)
    elif -0x8000000000000000 <= v < 0:
        out += struct.pack(">Bq", 0xD3, v)
    else:
        raise FormatError(f"integer out of 64-bit range: {v}")


def unpackb(data: bytes):
    """Decode one MessagePack object; trailing bytes are an error."""
    obj, pos = _unpack(memoryview(data), 0)
    if pos != len(data):
        raise FormatError(f"trailing bytes after msgpack object ({len(data) - pos})")
    return obj


def _unpack(buf: memoryview, pos: int):
    if pos >= len(buf):
        raise FormatError("truncated msgpack data")
    b = buf[pos]
    pos += 1
    if b <= 0x7F:
        return b, pos
    if b >= 0xE0:
        return b - 0x100, pos
    if 0x80 <= b <= 0x8F:
        return _unpack_map(buf, pos, b & 0x0F)
    if 0x90 <= b <= 0x9F:
        return _unpack_array(buf, pos, b & 0x0F)
    if 0xA0 <= b <= 0xBF:
        return _unpack_str(buf, pos, b & 0x1F)
    if b == 0xC0:
        return None, pos
    if b == 0xC2:
        return False, pos
    if b == 0xC3:
        return True, pos
    if b == 0xC4:
        return _unpack_bin(buf, pos + 1, _u(buf, pos, ">B"))
    if b == 0xC5:
        return _unpack_bin(buf, pos + 2, _u(buf, pos, ">H"))
    if b == 0xC6:
        return _unpack_bin(buf, pos + 4, _u(buf, pos, ">I"))
    if b == 0xCA:
        return _scalar(buf, pos, ">f", 4)
    if b == 0xCB:
        return _scalar(buf, pos, ">d", 8)
    if b == 0xCC:
        return _scalar(buf, pos, ">B", 1)
    if b == 0xCD:
        return _scalar(buf, pos, ">H", 2)
    if b == 0xCE:
        return _scalar(buf, pos, ">I", 4)
    if b == 0xCF:
        return _scalar(buf, pos, ">Q", 8)
    if b == 0xD0:
        return _scalar(buf, pos, ">b", 1)
    if b == 0xD1:
        return _scalar(buf, pos, ">h", 2)
    if b == 0xD2:
        return _scalar(buf, pos, ">i", 4)
    if b == 0xD3:
        return _scalar(buf, pos, ">q", 8)
    if b == 0xD9:
        return _unpack_str(buf, pos + 1, _u(buf, pos, ">B"))
    if b == 0xDA:
        return _unpack_str(buf, pos + 2, _u(buf, pos, ">H"))
    if b == 0xDB:
        return _unpack_str(buf, pos + 4, _u(buf, pos, ">I"))
    if b == 0xDC:
        return _unpack_array(buf, pos + 2, _u(buf, pos, ">H"))
    if b == 0xDD:
        return _unpack_array(buf, pos + 4, _u(buf, pos, ">I"))
    if b == 0xDE:
        return _unpack_map(buf, pos + 2, _u(buf, pos, ">H"))
    if b == 0xDF:
        return _unpack_map(buf, pos + 4, _u(buf, pos, ">I"))
    raise FormatError(f"unsupported msgpack type byte 0x{b:02x}")


def _u(buf: memoryview, pos: int, fmt: str) -> int:
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise FormatError("truncated msgpack header")
    return struct.unpack_from(fmt, buf, pos)[0]


def _scalar(buf: memoryview, pos: int, fmt: str, size: int):
    if pos + size > len(buf):
        raise FormatError("truncated msgpack scalar")
    value = struct.unpack_from(fmt, buf, pos)[0]
    if fmt == ">f":
        value = float(value)
    return value, pos + size


def _unpack_str(buf: memoryview, pos: int, n: int):
    if pos + n > len(buf):
        raise FormatError("truncated msgpack string")
    try:
        return bytes(buf[pos : pos + n]).decode("utf-8"), pos + n
    except UnicodeDecodeError as e:
        raise FormatError(f"invalid UTF-8 in msgpack string: {e}") from e


def _unpack_bin(buf: memoryview, pos: int, n: int):
    if pos + n > len(buf):
        raise FormatError("truncated msgpack bin")
    return bytes(buf[pos : pos + n]), pos + n


def _unpack_array(buf: memoryview, pos: int, n: int):
    items = []
    for _ in range(n):
        item, pos = _unpack(buf, pos)
        items.append(item)
    return items, pos


def _unpack_map(buf: memoryview, pos: int, n: int):
    out = {}
    for _ in range(n):
        key, pos = _unpack(buf, pos)
        value, pos = _unpack(buf, pos)
        out[key] = value
    return out, pos
