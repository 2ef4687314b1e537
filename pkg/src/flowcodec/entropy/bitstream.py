"""Container format for a coded sequence.

All integers are little-endian::

    header   "DVC1" | version u8 | width u16 | height u16 | gop_size u8 |
             num_frames u16 | lambda_id u8 | n_groups u8 | vmax u16 * n_groups |
             flags u8
    frame    type u8 | motion_len u32 | residual_len u32 | motion | residual |
             crc32 u32 (over everything before it in the frame record)

``width``/``height`` are the original, unpadded dimensions.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from ..frame_io import FrameRole

MAGIC = b"DVC1"
VERSION = 1
_HEAD = struct.Struct("<4sBHHBHBB")
_FRAME = struct.Struct("<BII")
_CRC = struct.Struct("<I")
_TYPES = {FrameRole.INTRA: 0, FrameRole.PREDICTED: 1}
_ROLES = {v: k for k, v in _TYPES.items()}

# header flag bits
FLAG_NO_MOTION = 1
FLAG_RAW_FLOW = 2
FLAG_NO_MC_NET = 4


class BitstreamError(ValueError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    gop_size: int
    num_frames: int
    lambda_id: int
    vmax: tuple[int, ...] = ()
    flags: int = 0
    version: int = VERSION


@dataclass(frozen=True)
class EncodedFrame:
    frame_type: FrameRole
    motion_payload: bytes = b""
    residual_payload: bytes = b""

    def __post_init__(self):
        if self.frame_type is FrameRole.INTRA and self.motion_payload:
            raise ValueError("INTRA frames carry no motion payload")

    @property
    def payload_lengths(self) -> tuple[int, int]:
        return len(self.motion_payload), len(self.residual_payload)


def write_bitstream(frames, header: StreamHeader) -> bytes:
    if header.num_frames != len(frames):
        raise ValueError(f"header announces {header.num_frames} frames, got {len(frames)}")
    out = bytearray(
        _HEAD.pack(
            MAGIC,
            header.version,
            header.width,
            header.height,
            header.gop_size,
            header.num_frames,
            header.lambda_id,
            len(header.vmax),
        )
    )
    out += struct.pack(f"<{len(header.vmax)}H", *header.vmax)
    out.append(header.flags)
    for fr in frames:
        rec = _FRAME.pack(_TYPES[fr.frame_type], len(fr.motion_payload), len(fr.residual_payload))
        rec += fr.motion_payload + fr.residual_payload
        out += rec + _CRC.pack(zlib.crc32(rec))
    return bytes(out)


def _take(data: bytes, pos: int, n: int, what: str) -> bytes:
    if pos + n > len(data):
        raise BitstreamError(f"truncated bitstream while reading {what}")
    return data[pos : pos + n]


def read_bitstream(data: bytes) -> tuple[StreamHeader, list[EncodedFrame]]:
    head = _take(data, 0, _HEAD.size, "header")
    magic, version, width, height, gop, nframes, lambda_id, ngroups = _HEAD.unpack(head)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported bitstream version {version}")
    pos = _HEAD.size
    vmax = struct.unpack(f"<{ngroups}H", _take(data, pos, 2 * ngroups, "vmax table"))
    pos += 2 * ngroups
    flags = _take(data, pos, 1, "flags")[0]
    pos += 1
    header = StreamHeader(width, height, gop, nframes, lambda_id, tuple(vmax), flags, version)
    frames = []
    for i in range(nframes):
        start = pos
        ftype, mlen, rlen = _FRAME.unpack(_take(data, pos, _FRAME.size, f"frame {i} header"))
        if ftype not in _ROLES:
            raise BitstreamError(f"frame {i}: unknown frame type {ftype}")
        pos += _FRAME.size
        motion = _take(data, pos, mlen, f"frame {i} motion payload")
        pos += mlen
        residual = _take(data, pos, rlen, f"frame {i} residual payload")
        pos += rlen
        (crc,) = _CRC.unpack(_take(data, pos, _CRC.size, f"frame {i} checksum"))
        if zlib.crc32(data[start:pos]) != crc:
            raise BitstreamError(f"frame {i}: checksum mismatch")
        pos += _CRC.size
        try:
            frames.append(EncodedFrame(_ROLES[ftype], motion, residual))
        except ValueError as exc:
            raise BitstreamError(f"frame {i}: {exc}") from exc
    if pos != len(data):
        raise BitstreamError(f"{len(data) - pos} trailing bytes after the last frame")
    return header, frames
