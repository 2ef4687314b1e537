"""Backward warping and a coarse-to-fine pyramid optical-flow estimator.

Tensors are NCHW. A flow field has two channels: horizontal then vertical
displacement in pixels, pointing from the target frame into the reference.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

MAX_LEVELS = 5
MIN_COARSE_SIZE = 8
INPUT_MEAN = 0.5  # frames are centred and scaled before the pyramid; uncentred inputs train very slowly
INPUT_SCALE = 4.0


def _base_grid(n, h, w, dtype, device):
    ys = torch.arange(h, dtype=dtype, device=device).view(1, h, 1).expand(n, h, w)
    xs = torch.arange(w, dtype=dtype, device=device).view(1, 1, w).expand(n, h, w)
    return xs, ys


def warp(source: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Sample ``source`` at ``p + flow(p)`` bilinearly, clamping to the border.

    Works in pixel coordinates directly (no normalized grid), so zero flow
    returns ``source`` bit for bit.
    """
    if source.shape[-2:] != flow.shape[-2:]:
        raise ValueError(f"source {tuple(source.shape)} and flow {tuple(flow.shape)} differ spatially")
    n, c, h, w = source.shape
    xs, ys = _base_grid(flow.shape[0], h, w, flow.dtype, flow.device)
    px = (xs + flow[:, 0]).clamp(0, w - 1)
    py = (ys + flow[:, 1]).clamp(0, h - 1)
    x0 = px.detach().floor().clamp(max=w - 2 if w > 1 else 0)
    y0 = py.detach().floor().clamp(max=h - 2 if h > 1 else 0)
    wx = (px - x0).unsqueeze(1)
    wy = (py - y0).unsqueeze(1)
    x0, y0 = x0.long(), y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    flat = source.reshape(n, c, h * w)

    def tap(yi, xi):
        idx = (yi * w + xi).view(n, 1, h * w).expand(n, c, h * w)
        return flat.gather(2, idx).view(n, c, h, w)

    top = tap(y0, x0) * (1 - wx) + tap(y0, x1) * wx
    bottom = tap(y1, x0) * (1 - wx) + tap(y1, x1) * wx
    return top * (1 - wy) + bottom * wy


def upsample_flow(flow: torch.Tensor, factor: int = 2) -> torch.Tensor:
    up = F.interpolate(flow, scale_factor=factor, mode="bilinear", align_corners=False)
    return up * factor


def downsample_flow(flow: torch.Tensor, factor: int = 2) -> torch.Tensor:
    return F.avg_pool2d(flow, factor) / factor


def pyramid_levels(height: int, width: int, max_levels: int = MAX_LEVELS) -> int:
    """Number of pyramid levels such that the coarsest level is at least 8x8."""
    smallest = min(height, width)
    if smallest < MIN_COARSE_SIZE:
        return 1
    return max(1, min(max_levels, int(math.floor(math.log2(smallest / MIN_COARSE_SIZE))) + 1))


class FlowRefiner(nn.Sequential):
    """Per-level CNN mapping [target, warped reference, flow] to a flow update."""

    def __init__(self, channels: int = 32, kernels=(7, 7, 5, 5, 3)):
        widths = [8] + [channels] * (len(kernels) - 2) + [channels // 2, 2]
        layers: list[nn.Module] = []
        for i, k in enumerate(kernels):
            layers.append(nn.Conv2d(widths[i], widths[i + 1], k, padding=k // 2))
            if i < len(kernels) - 1:
                layers.append(nn.ReLU(inplace=True))
        super().__init__(*layers)
        nn.init.zeros_(self[-1].weight)
        nn.init.zeros_(self[-1].bias)


class FlowNet(nn.Module):
    """Coarse-to-fine flow estimator.

    Each level warps the reference by the upsampled coarser flow and predicts
    a residual update. Level 0 is the finest; input sizes decide how many
    levels run (see :func:`pyramid_levels`).
    """

    def __init__(self, channels: int = 32, kernels=(7, 7, 5, 5, 3), max_levels: int = MAX_LEVELS):
        super().__init__()
        self.max_levels = max_levels
        self.levels = nn.ModuleList(FlowRefiner(channels, kernels) for _ in range(max_levels))

    def forward(
        self, target: torch.Tensor, reference: torch.Tensor, levels: int | None = None, return_pyramid: bool = False
    ):
        """Flow at full resolution; with ``return_pyramid`` the per-level flows, finest first."""
        if target.shape != reference.shape:
            raise ValueError(f"target {tuple(target.shape)} and reference {tuple(reference.shape)} differ")
        h, w = target.shape[-2:]
        if levels is None:
            levels = pyramid_levels(h, w, self.max_levels)
        if levels > self.max_levels:
            raise ValueError(f"at most {self.max_levels} pyramid levels supported")
        if h % 2 ** (levels - 1) or w % 2 ** (levels - 1):
            raise ValueError(f"frame size {h}x{w} not divisible by 2^{levels - 1}")
        targets = [(target - INPUT_MEAN) * INPUT_SCALE]
        refs = [(reference - INPUT_MEAN) * INPUT_SCALE]
        for _ in range(levels - 1):
            targets.append(F.avg_pool2d(targets[-1], 2))
            refs.append(F.avg_pool2d(refs[-1], 2))
        flow = None
        pyramid = []
        for lvl in reversed(range(levels)):
            tgt, ref = targets[lvl], refs[lvl]
            if flow is None:
                flow = tgt.new_zeros(tgt.shape[0], 2, *tgt.shape[-2:])
            else:
                flow = upsample_flow(flow, 2)
            warped = warp(ref, flow)
            flow = flow + self.levels[lvl](torch.cat([tgt, warped, flow], dim=1))
            pyramid.insert(0, flow)
        return pyramid if return_pyramid else flow


def estimate_flow(net: FlowNet, target: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    return net(target, reference)


def flow_manifest(net: FlowNet) -> dict[str, tuple[int, ...]]:
    """Tensor name -> shape table for converting external weights."""
    return {name: tuple(t.shape) for name, t in net.state_dict().items()}


def load_flow_weights(net: FlowNet, path: str | Path) -> None:
    """Load flow weights from a ``.npz`` or torch file keyed by manifest names.

    Every manifest entry must be present with a matching shape.
    """
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            tensors = {k: torch.from_numpy(data[k]) for k in data.files}
    else:
        tensors = torch.load(path, map_location="cpu", weights_only=True)
    manifest = flow_manifest(net)
    missing = sorted(set(manifest) - set(tensors))
    if missing:
        raise KeyError(f"flow weight file lacks tensors: {missing[:5]}{'...' if len(missing) > 5 else ''}")
    for name, shape in manifest.items():
        if tuple(tensors[name].shape) != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {tuple(tensors[name].shape)}")
    net.load_state_dict({k: tensors[k].to(torch.float32) for k in manifest})
