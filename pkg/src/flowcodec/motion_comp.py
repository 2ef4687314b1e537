"""Motion compensation: backward warp plus a multi-scale refinement CNN."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .flow import warp


@dataclass(frozen=True)
class McNetConfig:
    num_residual_blocks: int = 2
    channels: int = 64
    uses_multiscale: bool = True

    def __post_init__(self):
        if self.channels < 8:
            raise ValueError("channels must be >= 8")
        if self.num_residual_blocks < 1:
            raise ValueError("num_residual_blocks must be >= 1")


class PreActBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        out = self.conv1(F.relu(x))
        out = self.conv2(F.relu(out))
        return x + out


def _blocks(channels, n):
    return nn.Sequential(*(PreActBlock(channels) for _ in range(n)))


class RefineNet(nn.Module):
    """8-channel [warped, reference, flow] stack -> 3-channel additive correction.

    Two average-pool levels below full resolution, pre-activation residual
    blocks at every level, bilinear upsampling with skip additions. The last
    convolution starts at zero so an untrained net leaves the warp untouched.
    """

    def __init__(self, config: McNetConfig = McNetConfig()):
        super().__init__()
        c, n = config.channels, config.num_residual_blocks
        self.multiscale = config.uses_multiscale
        self.head = nn.Conv2d(8, c, 3, padding=1)
        self.down0 = _blocks(c, n)
        if self.multiscale:
            self.down1 = _blocks(c, n)
            self.bottom = _blocks(c, n)
            self.up1 = _blocks(c, n)
        self.up0 = _blocks(c, n)
        self.tail = nn.Conv2d(c, 3, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        if stack.shape[1] != 8:
            raise ValueError(f"expected 8 input channels, got {stack.shape[1]}")
        f0 = self.down0(self.head(stack))
        if self.multiscale:
            f1 = self.down1(F.avg_pool2d(f0, 2))
            f2 = self.bottom(F.avg_pool2d(f1, 2))
            u1 = self.up1(f1 + F.interpolate(f2, size=f1.shape[-2:], mode="bilinear", align_corners=False))
            u0 = f0 + F.interpolate(u1, size=f0.shape[-2:], mode="bilinear", align_corners=False)
        else:
            u0 = f0
        return self.tail(F.relu(self.up0(u0)))


def motion_compensate(
    reference: torch.Tensor,
    flow: torch.Tensor,
    refine: RefineNet | None = None,
    return_warped: bool = False,
):
    """Predicted frame ``warp(reference, flow) + refine([warped, reference, flow])``.

    With ``refine=None`` the prediction is the warped frame alone. The result
    is not clamped.
    """
    if reference.shape[-2:] != flow.shape[-2:] or reference.shape[0] != flow.shape[0]:
        raise ValueError(f"reference {tuple(reference.shape)} and flow {tuple(flow.shape)} do not match")
    warped = warp(reference, flow)
    predicted = warped if refine is None else warped + refine(torch.cat([warped, reference, flow], dim=1))
    return (predicted, warped) if return_warped else predicted
