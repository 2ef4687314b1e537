"""Byte-oriented range coder with carry propagation, plus latent payload framing.

A latent payload is ``<u32 element count><u32 crc32 of the int32 symbols>``
followed by the coder bytes. Values outside ``[-vmax, vmax]`` are sent as an
escape symbol followed by a sign bit and an Exp-Golomb coded overshoot.
"""

from __future__ import annotations

import struct
import zlib
from bisect import bisect_right

import numpy as np

from .density import CodingTables, FactorizedDensity

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
PAYLOAD_HEADER = struct.Struct("<II")
FLAT_HEADER = struct.Struct("<IIH")
MAX_ESCAPE_BITS = 40


class PayloadError(ValueError):
    """Corrupt payload or a payload decoded against the wrong shape."""


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def encode(self, start: int, size: int, total: int) -> None:
        r = self.range // total
        self.low += r * start
        self.range = r * size
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bit(self, bit: int) -> None:
        self.encode(bit, 1, 2)

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        self.r = 1
        for _ in range(5):
            self.code = ((self.code << 8) | self._byte()) & MASK32

    def _byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        self.pos += 1
        return 0

    def target(self, total: int) -> int:
        self.r = self.range // total
        return min(self.code // self.r, total - 1)

    def consume(self, start: int, size: int) -> None:
        self.code -= start * self.r
        self.range = self.r * size
        while self.range < TOP:
            self.code = ((self.code << 8) | self._byte()) & MASK32
            self.range <<= 8

    def decode_bit(self) -> int:
        bit = self.target(2)
        self.consume(bit, 1)
        return bit


def _encode_escape(enc: RangeEncoder, overshoot: int, negative: bool) -> None:
    enc.encode_bit(int(negative))
    m = overshoot + 1
    k = m.bit_length() - 1
    for _ in range(k):
        enc.encode_bit(0)
    enc.encode_bit(1)
    for i in reversed(range(k)):
        enc.encode_bit((m >> i) & 1)


def _decode_escape(dec: RangeDecoder) -> tuple[int, bool]:
    negative = bool(dec.decode_bit())
    k = 0
    while dec.decode_bit() == 0:
        k += 1
        if k > MAX_ESCAPE_BITS:
            raise PayloadError("escape code too long; payload is corrupt")
    m = 1
    for _ in range(k):
        m = (m << 1) | dec.decode_bit()
    return m - 1, negative


def _as_tables(density, vmax) -> CodingTables:
    if isinstance(density, CodingTables):
        return density
    if isinstance(density, FactorizedDensity):
        return density.coding_tables(vmax)
    raise TypeError(f"expected FactorizedDensity or CodingTables, got {type(density).__name__}")


def _crc(values: np.ndarray) -> int:
    return zlib.crc32(values.astype("<i4").tobytes())


def range_encode(latent, density, vmax: int | None = None) -> bytes:
    """Losslessly code an integer grid of shape (C, ...) under per-channel tables."""
    values = np.asarray(latent)
    if values.size and not np.array_equal(values, np.round(values)):
        raise ValueError("range_encode needs integer-valued latents")
    values = values.astype(np.int64)
    tables = _as_tables(density, vmax)
    header = PAYLOAD_HEADER.pack(values.size, _crc(values))
    if values.size == 0:
        return header
    if values.shape[0] != tables.channels:
        raise ValueError(f"latent has {values.shape[0]} channels, tables have {tables.channels}")
    v, esc, total = tables.vmax, tables.escape, tables.total
    enc = RangeEncoder()
    per_channel = values.reshape(values.shape[0], -1)
    for c in range(per_channel.shape[0]):
        cum = tables.cum_lists[c]
        for x in per_channel[c].tolist():
            if -v <= x <= v:
                s = x + v
                enc.encode(cum[s], cum[s + 1] - cum[s], total)
            else:
                enc.encode(cum[esc], cum[esc + 1] - cum[esc], total)
                _encode_escape(enc, abs(x) - v - 1, x < 0)
    return header + enc.finish()


def range_decode(payload: bytes, density, shape, vmax: int | None = None) -> np.ndarray:
    if len(payload) < PAYLOAD_HEADER.size:
        raise PayloadError("payload shorter than its header")
    count, crc = PAYLOAD_HEADER.unpack_from(payload)
    shape = tuple(int(s) for s in shape)
    expected = int(np.prod(shape)) if shape else 1
    if count != expected:
        raise PayloadError(f"payload holds {count} symbols but shape {shape} needs {expected}")
    if count == 0:
        return np.zeros(shape, dtype=np.int64)
    tables = _as_tables(density, vmax)
    if shape[0] != tables.channels:
        raise PayloadError(f"shape {shape} has {shape[0]} channels, tables have {tables.channels}")
    v, esc, total = tables.vmax, tables.escape, tables.total
    dec = RangeDecoder(payload[PAYLOAD_HEADER.size :])
    per = count // shape[0]
    out = []
    for c in range(shape[0]):
        cum = tables.cum_lists[c]
        for _ in range(per):
            t = dec.target(total)
            s = bisect_right(cum, t) - 1
            dec.consume(cum[s], cum[s + 1] - cum[s])
            if s == esc:
                over, negative = _decode_escape(dec)
                x = v + 1 + over
                out.append(-x if negative else x)
            else:
                out.append(s - v)
    values = np.array(out, dtype=np.int64).reshape(shape)
    if _crc(values) != crc:
        raise PayloadError("checksum mismatch; payload is corrupt")
    return values


def flat_encode(values) -> bytes:
    """Code integers under a uniform distribution over [-vmax, vmax], vmax = max |value|."""
    values = np.asarray(values).astype(np.int64)
    vmax = int(np.abs(values).max()) if values.size else 0
    if vmax > 0xFFFF:
        raise ValueError("flat coding supports |value| <= 65535")
    header = FLAT_HEADER.pack(values.size, _crc(values), vmax)
    if values.size == 0:
        return header
    enc = RangeEncoder()
    total = 2 * vmax + 1
    for x in values.ravel().tolist():
        enc.encode(x + vmax, 1, total)
    return header + enc.finish()


def flat_decode(payload: bytes, shape) -> np.ndarray:
    if len(payload) < FLAT_HEADER.size:
        raise PayloadError("payload shorter than its header")
    count, crc, vmax = FLAT_HEADER.unpack_from(payload)
    shape = tuple(int(s) for s in shape)
    if count != int(np.prod(shape)):
        raise PayloadError(f"payload holds {count} symbols but shape {shape} needs {int(np.prod(shape))}")
    dec = RangeDecoder(payload[FLAT_HEADER.size :])
    total = 2 * vmax + 1
    out = []
    for _ in range(count):
        s = dec.target(total)
        dec.consume(s, 1)
        out.append(s - vmax)
    values = np.array(out, dtype=np.int64).reshape(shape)
    if _crc(values) != crc:
        raise PayloadError("checksum mismatch; payload is corrupt")
    return values
