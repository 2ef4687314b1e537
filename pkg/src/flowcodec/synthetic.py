"""Synthetic translating-texture clips with ground-truth backward flow.

Each clip pans a camera over a random texture at a constant sub-pixel
velocity and moves a textured square sprite with its own velocity. Flat
patches are painted into the texture so parts of the frame carry no usable
motion cue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


def make_texture(height: int, width: int, rng: np.random.Generator, flat_patches: int = 3) -> np.ndarray:
    tex = np.zeros((height, width, 3))
    for sigma, weight in ((1.0, 0.35), (3.0, 0.4), (8.0, 0.6)):
        noise = rng.standard_normal((height, width, 3))
        noise = ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="wrap")
        tex += weight * noise / (noise.std() + 1e-8)
    mix = rng.uniform(0.3, 1.0, size=(3, 3))
    tex = tex @ mix / mix.sum(axis=0)
    tex = (tex - tex.min()) / (tex.max() - tex.min() + 1e-8)
    tex = 0.1 + 0.8 * tex
    for _ in range(flat_patches):
        ph, pw = rng.integers(height // 8, height // 3), rng.integers(width // 8, width // 3)
        top, left = rng.integers(0, height - ph), rng.integers(0, width - pw)
        tex[top : top + ph, left : left + pw] = rng.uniform(0.15, 0.85, size=3)
    return tex


def _sample(tex: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return np.stack(
        [ndimage.map_coordinates(tex[..., c], [ys, xs], order=1, mode="nearest") for c in range(3)], axis=-1
    )


@dataclass
class SyntheticClip:
    frames: np.ndarray  # (T, H, W, 3)
    flows: np.ndarray  # (T-1, H, W, 2): flows[t-1] maps frame t into frame t-1


def make_clip(
    rng: np.random.Generator,
    num_frames: int = 5,
    size: int = 64,
    max_speed: float = 3.0,
    sprite: bool = True,
) -> SyntheticClip:
    margin = int(np.ceil(max_speed * num_frames)) + 4
    canvas = size + 2 * margin
    bg = make_texture(canvas, canvas, rng)
    v = rng.uniform(-max_speed, max_speed, size=2)  # (vx, vy) camera pan per frame
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if sprite:
        s = int(rng.integers(size // 4, size // 2))
        sprite_tex = make_texture(s + 2, s + 2, rng, flat_patches=0)
        w = rng.uniform(-max_speed, max_speed, size=2)
        p0 = rng.uniform(size * 0.2, size * 0.8 - s, size=2)
    frames, flows = [], []
    for t in range(num_frames):
        ox = margin + t * v[0]
        oy = margin + t * v[1]
        frame = _sample(bg, yy + oy, xx + ox)
        flow = np.broadcast_to(v, (size, size, 2)).copy()
        if sprite:
            px, py = p0[0] + t * w[0], p0[1] + t * w[1]
            lx, ly = xx - px, yy - py
            inside = (lx >= 0) & (lx < s) & (ly >= 0) & (ly < s)
            patch = _sample(sprite_tex, ly + 1, lx + 1)
            frame = np.where(inside[..., None], patch, frame)
            flow[inside] = -w
        frames.append(frame)
        if t:
            flows.append(flow)
    return SyntheticClip(
        np.clip(np.stack(frames), 0, 1).astype(np.float32),
        np.stack(flows).astype(np.float32) if flows else np.zeros((0, size, size, 2), np.float32),
    )


def make_dataset(num_clips: int, num_frames: int = 5, size: int = 64, seed: int = 0, max_speed: float = 3.0):
    """Return (frames (N, T, H, W, 3), flows (N, T-1, H, W, 2))."""
    rng = np.random.default_rng(seed)
    clips = [make_clip(rng, num_frames, size, max_speed) for _ in range(num_clips)]
    return np.stack([c.frames for c in clips]), np.stack([c.flows for c in clips])


def shifted_pair(size: int = 64, shift=(2, 0), seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(target, reference) where the reference is the target rolled by ``shift`` = (dx, dy)."""
    rng = np.random.default_rng(seed)
    target = make_texture(size, size, rng, flat_patches=0).astype(np.float32)
    reference = np.roll(target, shift=(shift[1], shift[0]), axis=(0, 1))
    return target, reference
