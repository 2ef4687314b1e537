"""Evaluate a checkpoint on sequences: real bitstreams, RD points and analysis stats."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import analyze_flow, motion_fraction
from .checkpoint import Checkpoint
from .codec import encode_video
from .metrics import RDCurve, RDPoint, ms_ssim, ordering_violations, psnr, sequence_psnr


@dataclass
class SequenceEval:
    bpp: float
    psnr_db: float
    msssim: float
    motion_bpp: float
    motion_fraction: float
    warped_psnr: float
    zero_flow_fraction: float
    estimated_bpp: float


@dataclass
class EvalSummary:
    label: str
    sequences: list[SequenceEval] = field(default_factory=list)

    def mean(self, name: str) -> float:
        vals = [getattr(s, name) for s in self.sequences]
        vals = [v for v in vals if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def point(self) -> RDPoint:
        return RDPoint(self.mean("bpp"), self.mean("psnr_db"), self.mean("msssim"), self.label)


def evaluate_sequence(frames, checkpoint: Checkpoint, gop_size: int = 10, with_msssim: bool = True) -> SequenceEval:
    frames = [np.asarray(f, dtype=np.float32) for f in frames]
    res = encode_video(frames, checkpoint, gop_size)
    w, h = res.reports[0].width, res.reports[0].height
    p_frames = [r for r in res.reports if r.frame_type.value == "P"]
    p_targets = [f for f, r in zip(frames, res.reports) if r.frame_type.value == "P"]
    warped = [psnr(a, b) for a, b in zip(p_targets, res.warped)]
    return SequenceEval(
        bpp=res.bpp(),
        psnr_db=sequence_psnr(frames, res.reconstructions),
        msssim=float(np.mean([ms_ssim(a, b) for a, b in zip(frames, res.reconstructions)])) if with_msssim else float("nan"),
        motion_bpp=sum(r.actual_bits_motion for r in p_frames) / (w * h * len(p_frames)) if p_frames else 0.0,
        motion_fraction=motion_fraction(res.reports),
        warped_psnr=float(np.mean(warped)) if warped else float("nan"),
        zero_flow_fraction=analyze_flow(res.flows).zero_fraction if res.flows else float("nan"),
        estimated_bpp=sum(r.estimated_bits for r in res.reports) / (w * h * len(res.reports)),
    )


def evaluate(checkpoint: Checkpoint, sequences, gop_size: int = 10, label: str = "", with_msssim: bool = True) -> EvalSummary:
    summary = EvalSummary(label or f"lambda={checkpoint.lam:g}")
    for seq in sequences:
        summary.sequences.append(evaluate_sequence(seq, checkpoint, gop_size, with_msssim))
    return summary


def rd_curve(summaries, label: str = "flowcodec") -> tuple[RDCurve | None, list[str]]:
    """Points ordered by lambda as given; violations are reported, never sorted away."""
    points = [s.point() for s in summaries]
    problems = ordering_violations(points)
    return (None if problems else RDCurve(tuple(points), label)), problems
