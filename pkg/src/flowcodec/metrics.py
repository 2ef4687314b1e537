"""Quality and rate metrics on RGB frames in [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

LOSSLESS = math.inf  # PSNR of identical frames

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(err: float) -> float:
    return LOSSLESS if err == 0 else -10.0 * math.log10(err)


def psnr(a, b) -> float:
    """PSNR in dB with peak 1; identical inputs give :data:`LOSSLESS`."""
    return psnr_from_mse(mse(a, b))


def sequence_psnr(originals, decoded) -> float:
    """Mean of per-frame PSNRs."""
    return float(np.mean([psnr(a, b) for a, b in zip(originals, decoded, strict=True)]))


def _gaussian(dtype) -> torch.Tensor:
    coords = torch.arange(WINDOW, dtype=dtype) - WINDOW // 2
    g = torch.exp(-(coords**2) / (2 * SIGMA**2))
    return g / g.sum()


def _blur(x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    x = F.conv2d(x, g.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    return F.conv2d(x, g.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)


def _ssim_terms(x, y, g):
    c1, c2 = K1**2, K2**2
    mu_x, mu_y = _blur(x, g), _blur(y, g)
    sxx = _blur(x * x, g) - mu_x**2
    syy = _blur(y * y, g) - mu_y**2
    sxy = _blur(x * y, g) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    return (lum * cs).mean(dim=(2, 3)), cs.mean(dim=(2, 3))


def ms_ssim_scales(height: int, width: int) -> int:
    scales = 1
    while scales < len(MS_SSIM_WEIGHTS) and min(height, width) // 2**scales >= WINDOW:
        scales += 1
    return scales


def ms_ssim(a, b) -> float:
    """Multi-scale SSIM of two (H, W, 3) frames, per channel then averaged.

    Uses all five scales when the short side is at least 176 pixels; smaller
    frames use as many scales as fit an 11x11 window, with the weights
    renormalized to sum to one.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < WINDOW:
        raise ValueError(f"frames must be at least {WINDOW} pixels on each side")
    x = torch.from_numpy(a).permute(2, 0, 1)[None]
    y = torch.from_numpy(b).permute(2, 0, 1)[None]
    levels = ms_ssim_scales(*a.shape[:2])
    weights = torch.tensor(MS_SSIM_WEIGHTS[:levels], dtype=torch.float64)
    weights = weights / weights.sum()
    g = _gaussian(torch.float64)
    values = []
    for i in range(levels):
        ssim, cs = _ssim_terms(x, y, g)
        if i < levels - 1:
            values.append(torch.relu(cs))
            x = F.avg_pool2d(x, 2, ceil_mode=False)
            y = F.avg_pool2d(y, 2, ceil_mode=False)
        else:
            values.append(torch.relu(ssim))
    stack = torch.stack(values, dim=0)  # (levels, 1, C)
    per_channel = torch.prod(stack ** weights.view(-1, 1, 1), dim=0)
    return float(per_channel.mean())


def msssim_db(value: float) -> float:
    return LOSSLESS if value >= 1.0 else -10.0 * math.log10(1.0 - value)


def bpp(total_bits: int, width: int, height: int) -> float:
    """Bits per pixel against the original (unpadded) frame size."""
    return total_bits / (width * height)


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr_db: float
    msssim: float
    label: str = ""

    @property
    def msssim_db(self) -> float:
        return msssim_db(self.msssim)

    def quality(self, metric: str) -> float:
        if metric == "psnr":
            return self.psnr_db
        if metric == "msssim_db":
            return self.msssim_db
        raise ValueError(f"unknown quality metric {metric!r}")


def ordering_violations(points) -> list[str]:
    """Describe every adjacent pair whose bpp does not strictly increase."""
    return [
        f"point {i + 1} ({q.label or i + 1}) has bpp {q.bpp:.5f} <= previous {p.bpp:.5f}"
        for i, (p, q) in enumerate(zip(points, points[1:]))
        if not q.bpp > p.bpp
    ]


@dataclass(frozen=True)
class RDCurve:
    points: tuple[RDPoint, ...]
    label: str = ""

    def __post_init__(self):
        problems = ordering_violations(self.points)
        if problems:
            raise ValueError(f"curve {self.label!r} is not in ascending bpp order: " + "; ".join(problems))

    def rates(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    def qualities(self, metric: str) -> np.ndarray:
        return np.array([p.quality(metric) for p in self.points])


def write_curve_csv(path, curve: RDCurve) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "bpp", "psnr_db", "msssim"])
        for p in curve.points:
            w.writerow([p.label or curve.label, f"{p.bpp:.6f}", f"{p.psnr_db:.4f}", f"{p.msssim:.6f}"])


def read_curve_csv(path, label: str | None = None) -> RDCurve:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    points = tuple(RDPoint(float(r["bpp"]), float(r["psnr_db"]), float(r["msssim"]), r.get("label", "")) for r in rows)
    return RDCurve(points, label or (rows[0]["label"] if rows else str(path)))
