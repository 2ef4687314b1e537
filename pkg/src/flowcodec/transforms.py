"""Analysis/synthesis transforms for motion and residual compression.

Both codecs share one layout: three strided convolutions each followed by
GDN and a final linear strided convolution (16x downsampling in total), and
the mirrored transposed-convolution stack with IGDN on the way back up.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .gdn import GDN

MOTION_LATENT_CHANNELS = 128


def _check_divisible(x: torch.Tensor) -> None:
    h, w = x.shape[-2:]
    if h % 16 or w % 16:
        raise ValueError(f"spatial size {h}x{w} must be divisible by 16; pad the input first")


def _conv(cin, cout, k):
    return nn.Conv2d(cin, cout, k, stride=2, padding=k // 2)


def _deconv(cin, cout, k):
    return nn.ConvTranspose2d(cin, cout, k, stride=2, padding=k // 2, output_padding=1)


class AnalysisTransform(nn.Module):
    def __init__(self, in_channels: int, channels: int, latent_channels: int, kernel: int):
        super().__init__()
        self.net = nn.Sequential(
            _conv(in_channels, channels, kernel),
            GDN(channels),
            _conv(channels, channels, kernel),
            GDN(channels),
            _conv(channels, channels, kernel),
            GDN(channels),
            _conv(channels, latent_channels, kernel),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_divisible(x)
        return self.net(x)


class SynthesisTransform(nn.Module):
    def __init__(self, latent_channels: int, channels: int, out_channels: int, kernel: int):
        super().__init__()
        self.latent_channels = latent_channels
        self.net = nn.Sequential(
            _deconv(latent_channels, channels, kernel),
            GDN(channels, inverse=True),
            _deconv(channels, channels, kernel),
            GDN(channels, inverse=True),
            _deconv(channels, channels, kernel),
            GDN(channels, inverse=True),
            _deconv(channels, out_channels, kernel),
        )

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.shape[1] != self.latent_channels:
            raise ValueError(f"expected {self.latent_channels} latent channels, got {latent.shape[1]}")
        return self.net(latent)


class MotionEncoder(AnalysisTransform):
    """Flow (2 channels, raw pixel displacements) -> 128 x H/16 x W/16 latent."""

    def __init__(self):
        super().__init__(2, MOTION_LATENT_CHANNELS, MOTION_LATENT_CHANNELS, 3)


class MotionDecoder(SynthesisTransform):
    def __init__(self):
        super().__init__(MOTION_LATENT_CHANNELS, MOTION_LATENT_CHANNELS, 2, 3)
        # decoded motion starts at zero so early training sees a plain copy of the reference
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)


class ResidualEncoder(AnalysisTransform):
    def __init__(self, channels: int = 128, latent_channels: int = 96):
        super().__init__(3, channels, latent_channels, 5)


class ResidualDecoder(SynthesisTransform):
    def __init__(self, channels: int = 128, latent_channels: int = 96):
        super().__init__(latent_channels, channels, 3, 5)


def reconstruct_frame(predicted: torch.Tensor, residual_hat: torch.Tensor, clamp: bool = True) -> torch.Tensor:
    """``predicted + residual_hat``, clamped to [0, 1] unless ``clamp`` is False."""
    if predicted.shape != residual_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(predicted.shape)} vs {tuple(residual_hat.shape)}")
    out = predicted + residual_hat
    return out.clamp(0.0, 1.0) if clamp else out
