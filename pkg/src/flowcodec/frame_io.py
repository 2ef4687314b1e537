"""Frame loading, padding, GOP partitioning and training crops.

Frames are ``float32`` numpy arrays of shape ``(H, W, 3)`` holding RGB values
in ``[0, 1]``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

MIN_CODEC_SIZE = 64


class FrameDecodeError(ValueError):
    """Raised when a video file is malformed or truncated."""

    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class FrameRole(enum.Enum):
    INTRA = "I"
    PREDICTED = "P"


@dataclass(frozen=True)
class GopLayout:
    gop_size: int
    frame_roles: tuple[FrameRole, ...]


def check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must have shape (H, W, 3), got {frame.shape}")
    if not np.isfinite(frame).all() or frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("frame values must be finite and lie in [0, 1]")
    return frame


def read_keyvalue(path: str | Path) -> dict[str, str]:
    """Parse a ``key = value`` (or ``key: value``) text file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^([A-Za-z0-9_.\-]+)\s*[=:]\s*(.*)$", line)
        if m is None:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        out[m.group(1).replace("-", "_")] = m.group(2).strip()
    return out


# BT.601 full range
def yuv420_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Convert 8-bit planar 4:2:0 YUV to an RGB frame in [0, 1]."""
    h, w = y.shape
    u = np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    v = np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    y = y.astype(np.float64)
    r = y + 1.402 * v
    g = y - 0.344136 * u - 0.714136 * v
    b = y + 1.772 * u
    rgb = np.stack([r, g, b], axis=-1) / 255.0
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


def rgb_to_yuv420(frame: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`yuv420_to_rgb` with 2x2 box-averaged chroma."""
    rgb = check_frame(frame).astype(np.float64) * 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    v = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    h, w = y.shape
    ch, cw = (h + 1) // 2, (w + 1) // 2

    def sub(plane):
        padded = np.pad(plane, ((0, 2 * ch - h), (0, 2 * cw - w)), mode="edge")
        return padded.reshape(ch, 2, cw, 2).mean(axis=(1, 3))

    def to_u8(plane):
        return np.clip(np.round(plane), 0, 255).astype(np.uint8)

    return to_u8(y), to_u8(sub(u)), to_u8(sub(v))


def _frame_index(path: Path) -> int:
    digits = re.findall(r"\d+", path.stem)
    if not digits:
        raise FrameDecodeError(f"PNG file name has no frame number: {path.name}")
    return int(digits[-1])


def _load_png_dir(path: Path) -> list[np.ndarray]:
    files = sorted(path.glob("*.png"), key=_frame_index)
    frames = []
    for i, f in enumerate(files):
        try:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except (OSError, SyntaxError) as exc:
            raise FrameDecodeError(f"cannot decode frame {i} ({f.name}): {exc}", i) from exc
        if frames and arr.shape != frames[0].shape:
            raise FrameDecodeError(
                f"frame {i} ({f.name}) has shape {arr.shape}, expected {frames[0].shape}", i
            )
        frames.append(arr)
    return frames


def _load_yuv(path: Path, width: int, height: int, frame_count: int | None) -> list[np.ndarray]:
    data = path.read_bytes()
    cw, ch = (width + 1) // 2, (height + 1) // 2
    frame_bytes = width * height + 2 * cw * ch
    available = len(data) // frame_bytes
    if frame_count is None:
        frame_count = available
        if len(data) % frame_bytes:
            raise FrameDecodeError(
                f"truncated raw video: frame {available} has {len(data) % frame_bytes} "
                f"of {frame_bytes} bytes",
                available,
            )
    elif frame_count > available:
        raise FrameDecodeError(
            f"truncated raw video: frame {available} is incomplete "
            f"(file holds {len(data)} bytes, need {frame_count * frame_bytes})",
            available,
        )
    frames = []
    for i in range(frame_count):
        buf = np.frombuffer(data, dtype=np.uint8, count=frame_bytes, offset=i * frame_bytes)
        y = buf[: width * height].reshape(height, width)
        u = buf[width * height : width * height + cw * ch].reshape(ch, cw)
        v = buf[width * height + cw * ch :].reshape(ch, cw)
        frames.append(yuv420_to_rgb(y, u, v))
    return frames


def load_sequence(
    path: str | Path,
    format: str | None = None,
    width: int | None = None,
    height: int | None = None,
    frame_count: int | None = None,
) -> list[np.ndarray]:
    """Load a video as a list of RGB frames in display order.

    ``format`` is ``"png-directory"`` or ``"raw-planar-yuv420"``; it is inferred
    from the path when omitted. Raw files take their dimensions from the
    arguments or, failing that, from a sidecar ``<file>.cfg`` holding
    ``width``, ``height``, ``fps`` and ``frame_count``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format is None:
        format = "png-directory" if path.is_dir() else "raw-planar-yuv420"
    if format == "png-directory":
        return _load_png_dir(path)
    if format != "raw-planar-yuv420":
        raise ValueError(f"unknown sequence format {format!r}")
    if width is None or height is None:
        sidecar = path.with_name(path.name + ".cfg")
        if not sidecar.exists():
            sidecar = path.with_suffix(".cfg")
        if not sidecar.exists():
            raise FileNotFoundError(f"raw video needs width/height or a sidecar at {sidecar}")
        meta = read_keyvalue(sidecar)
        width = int(meta["width"])
        height = int(meta["height"])
        if frame_count is None and "frame_count" in meta:
            frame_count = int(meta["frame_count"])
    return _load_yuv(path, width, height, frame_count)


def write_yuv420(frames: Sequence[np.ndarray], path: str | Path, fps: float = 30.0) -> Path:
    """Write frames as raw planar YUV 4:2:0 plus a ``.cfg`` sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        for frame in frames:
            for plane in rgb_to_yuv420(frame):
                fh.write(plane.tobytes())
    h, w = frames[0].shape[:2]
    sidecar = path.with_name(path.name + ".cfg")
    sidecar.write_text(f"width = {w}\nheight = {h}\nfps = {fps}\nframe_count = {len(frames)}\n")
    return path


def write_png_dir(frames: Sequence[np.ndarray], path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(len(frames))))
    for i, frame in enumerate(frames):
        arr = np.clip(np.round(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(path / f"{i:0{digits}d}.png")
    return path


def pad_to_multiple(frame: np.ndarray, multiple: int = 16, minimum: int = 0) -> tuple[np.ndarray, tuple[int, int]]:
    """Edge-replicate ``frame`` on the bottom/right up to the next multiple.

    Returns the padded frame and the original ``(height, width)``.
    """
    if multiple < 1:
        raise ValueError("multiple must be >= 1")
    h, w = frame.shape[:2]
    ph = max(-(-h // multiple) * multiple, minimum)
    pw = max(-(-w // multiple) * multiple, minimum)
    if (ph, pw) == (h, w):
        return frame, (h, w)
    pad = ((0, ph - h), (0, pw - w)) + ((0, 0),) * (frame.ndim - 2)
    return np.pad(frame, pad, mode="edge"), (h, w)


def pad_for_codec(frame: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    return pad_to_multiple(frame, 16, minimum=MIN_CODEC_SIZE)


def crop_to(frame: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    return frame[: dims[0], : dims[1]]


def padded_dims(height: int, width: int) -> tuple[int, int]:
    """Dimensions :func:`pad_for_codec` produces for a ``height`` x ``width`` frame."""
    def up(n):
        return max(-(-n // 16) * 16, MIN_CODEC_SIZE)

    return up(height), up(width)


def make_gops(frames: Sequence, gop_size: int) -> list[tuple[GopLayout, list]]:
    if gop_size < 1:
        raise ValueError("gop_size must be >= 1")
    if len(frames) == 0:
        raise ValueError("cannot split an empty frame list into GOPs")
    gops = []
    for start in range(0, len(frames), gop_size):
        chunk = list(frames[start : start + gop_size])
        roles = (FrameRole.INTRA,) + (FrameRole.PREDICTED,) * (len(chunk) - 1)
        gops.append((GopLayout(gop_size, roles), chunk))
    return gops


def random_crop_clip(frames: Sequence[np.ndarray], size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Crop the same ``size`` x ``size`` window out of every frame of a clip."""
    h, w = frames[0].shape[:2]
    if any(f.shape[:2] != (h, w) for f in frames):
        raise ValueError("all frames of a clip must share dimensions")
    if h < size or w < size:
        raise ValueError(f"clip of {h}x{w} is smaller than crop size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return [f[top : top + size, left : left + size] for f in frames]
