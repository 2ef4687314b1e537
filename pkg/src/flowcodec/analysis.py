"""Analysis artifacts: flow-magnitude histograms, bit breakdowns and baseline command lines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FLOW_BIN = 0.25
QUALITIES = (15, 19, 23, 27)
DATASET_GOPS = {"HEVC": 10, "UVG": 12}
HEVC_FRAMES = 100

H264_TEMPLATE = (
    "ffmpeg -y -pix_fmt yuv420p -s {W}x{H} -r {FR} -i Video.yuv -vframes {N} -c:v libx264 "
    "-preset veryfast -tune zerolatency -crf {Q} -g {GOP} -bf 2 -b_strategy 0 -sc_threshold 0 "
    "-loglevel debug output.mkv"
)
H265_TEMPLATE = (
    "ffmpeg -pix_fmt yuv420p -s {W}x{H} -r {FR} -i Video.yuv -vframes {N} -c:v libx265 "
    '-preset veryfast -tune zerolatency -x265-params "crf={Q}:keyint={GOP}:verbose=1" output.mkv'
)


@dataclass
class FlowStats:
    """Histogram of |flow| in fixed 0.25-px bins; ``edges[i]`` is the left edge of bin i."""

    counts: np.ndarray
    edges: np.ndarray
    zero_fraction: float
    mean_magnitude: float

    def as_rows(self):
        return [(float(e), int(c)) for e, c in zip(self.edges, self.counts)]


def flow_magnitude(flow: np.ndarray) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape[-1] != 2:
        raise ValueError(f"flow must end in 2 components, got shape {flow.shape}")
    return np.hypot(flow[..., 0], flow[..., 1])


def analyze_flow(flow_hat, bin_width: float = FLOW_BIN) -> FlowStats:
    """Magnitude histogram and the fraction of pixels with |flow| < ``bin_width``.

    Accepts one (H, W, 2) field or a sequence of them. Bin ``k`` covers
    ``[k * bin_width, (k + 1) * bin_width)``, so bin 0 is exactly the
    zero-motion share.
    """
    mags = np.concatenate([flow_magnitude(f).ravel() for f in _as_list(flow_hat)])
    idx = np.floor(mags / bin_width).astype(np.int64)
    counts = np.bincount(idx, minlength=1)
    edges = np.arange(len(counts)) * bin_width
    return FlowStats(counts, edges, float(np.mean(mags < bin_width)), float(mags.mean()))


def _as_list(flow_hat):
    if isinstance(flow_hat, np.ndarray) and flow_hat.ndim == 3:
        return [flow_hat]
    return list(flow_hat)


def motion_fraction(reports) -> float:
    """Share of motion bits among all P-frame payload bits."""
    motion = sum(r.actual_bits_motion for r in reports if r.frame_type.value == "P")
    total = sum(r.actual_bits for r in reports if r.frame_type.value == "P")
    return motion / total if total else 0.0


def bit_breakdown(reports) -> list[dict]:
    """Per-frame estimated and actual bits, one row per frame."""
    rows = []
    for i, r in enumerate(reports):
        rows.append(
            {
                "frame": i,
                "type": r.frame_type.value,
                "est_motion": r.estimated_bits_motion,
                "est_residual": r.estimated_bits_residual,
                "actual_motion": r.actual_bits_motion,
                "actual_residual": r.actual_bits_residual,
                "bpp": r.bpp,
                "motion_fraction": r.motion_fraction,
            }
        )
    return rows


def emit_baseline_commands(
    width: int,
    height: int,
    frame_rate,
    num_frames: int = HEVC_FRAMES,
    qualities=QUALITIES,
    gop: int = DATASET_GOPS["HEVC"],
) -> str:
    """H.264 then H.265 command lines, one per quality, newline-terminated."""
    params = dict(W=width, H=height, FR=frame_rate, N=num_frames, GOP=gop)
    lines = [H264_TEMPLATE.format(Q=q, **params) for q in qualities]
    lines += [H265_TEMPLATE.format(Q=q, **params) for q in qualities]
    return "\n".join(lines) + "\n"
