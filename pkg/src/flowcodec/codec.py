"""Sequence-level encoding and decoding with real range-coded payloads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import Checkpoint
from .entropy.bitstream import (
    FLAG_NO_MC_NET,
    FLAG_NO_MOTION,
    FLAG_RAW_FLOW,
    BitstreamError,
    EncodedFrame,
    StreamHeader,
    read_bitstream,
    write_bitstream,
)
from .entropy.range_coder import flat_decode, flat_encode, range_decode, range_encode
from .frame_io import FrameRole, check_frame, crop_to, make_gops, pad_for_codec, padded_dims
from .model import AblationConfig, VideoCodec, raw_flow_bits


@dataclass
class BitrateReport:
    """Estimated and actual bits of one coded frame."""

    frame_type: FrameRole
    width: int
    height: int
    estimated_bits_motion: float = 0.0
    estimated_bits_residual: float = 0.0
    actual_bits_motion: int = 0
    actual_bits_residual: int = 0

    @property
    def estimated_bits(self) -> float:
        return self.estimated_bits_motion + self.estimated_bits_residual

    @property
    def actual_bits(self) -> int:
        return self.actual_bits_motion + self.actual_bits_residual

    @property
    def bpp(self) -> float:
        return self.actual_bits / (self.width * self.height)

    @property
    def estimated_bpp(self) -> float:
        return self.estimated_bits / (self.width * self.height)

    @property
    def motion_bpp(self) -> float:
        return self.actual_bits_motion / (self.width * self.height)

    @property
    def motion_fraction(self) -> float:
        return self.actual_bits_motion / self.actual_bits if self.actual_bits else 0.0


@dataclass
class EncodeResult:
    bitstream: bytes
    reports: list[BitrateReport]
    reconstructions: list[np.ndarray]
    flows: list[np.ndarray] = field(default_factory=list)  # decoded flow per P-frame, (H, W, 2)
    warped: list[np.ndarray] = field(default_factory=list)  # warp-only prediction per P-frame

    @property
    def total_bits(self) -> int:
        return 8 * len(self.bitstream)

    def bpp(self) -> float:
        """Payload bits per pixel per frame (container overhead excluded)."""
        r = self.reports[0]
        return sum(x.actual_bits for x in self.reports) / (r.width * r.height * len(self.reports))


def stream_flags(ablation: AblationConfig) -> int:
    flags = 0
    if not ablation.use_motion:
        flags |= FLAG_NO_MOTION
    if not ablation.use_mv_codec:
        flags |= FLAG_RAW_FLOW
    if not ablation.use_mc_net:
        flags |= FLAG_NO_MC_NET
    return flags


def _to_tensor(frame: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(frame, dtype=np.float32)).permute(2, 0, 1)[None]


def _to_frame(t: torch.Tensor) -> np.ndarray:
    return t[0].permute(1, 2, 0).numpy().astype(np.float32)


def _bits(density, latent: torch.Tensor) -> float:
    return float(density.estimate_bits(latent))


def encode_video(frames, checkpoint: Checkpoint, gop_size: int = 10) -> EncodeResult:
    """Code ``frames`` GOP by GOP; the first frame of each GOP is intra coded."""
    model: VideoCodec = checkpoint.model
    model.eval()
    if not 1 <= gop_size <= 255:
        raise ValueError("gop_size must lie in [1, 255]")
    if len(frames) > 0xFFFF:
        raise ValueError("at most 65535 frames per stream")
    frames = [check_frame(f) for f in frames]
    h, w = frames[0].shape[:2]
    if any(f.shape != frames[0].shape for f in frames):
        raise ValueError("all frames must share dimensions")
    vmax = model.vmax_table()
    if min(vmax) < 0:
        raise RuntimeError("checkpoint entropy models are not frozen; run VideoCodec.freeze first")
    ab = model.ablation
    coded, reports, recons, flows, warped = [], [], [], [], []
    with torch.no_grad():
        for _, gop in make_gops(frames, gop_size):
            ref = None
            for i, frame in enumerate(gop):
                padded, dims = pad_for_codec(frame)
                x = _to_tensor(padded)
                if i == 0:
                    res = model.analyse_intra(x)
                    y = res["y_hat"][0]
                    payload = range_encode(y.numpy(), model.intra_density)
                    coded.append(EncodedFrame(FrameRole.INTRA, b"", payload))
                    reports.append(
                        BitrateReport(
                            FrameRole.INTRA, w, h,
                            estimated_bits_residual=_bits(model.intra_density, y),
                            actual_bits_residual=8 * len(payload),
                        )
                    )
                else:
                    res = model.analyse_predicted(x, ref)
                    y = res["y_hat"][0]
                    r_payload = range_encode(y.numpy(), model.res_density)
                    m_payload, est_m = b"", 0.0
                    if ab.use_motion:
                        m = res["m_hat"][0]
                        if ab.use_mv_codec:
                            m_payload = range_encode(m.numpy(), model.mv_density)
                            est_m = _bits(model.mv_density, m)
                        else:
                            m_payload = flat_encode(m.numpy())
                            est_m = float(raw_flow_bits(res["m_hat"])[0])
                        flows.append(crop_to(_to_frame(res["flow_hat"]), dims))
                        warped.append(crop_to(np.clip(_to_frame(res["warped"]), 0, 1), dims))
                    coded.append(EncodedFrame(FrameRole.PREDICTED, m_payload, r_payload))
                    reports.append(
                        BitrateReport(
                            FrameRole.PREDICTED, w, h,
                            estimated_bits_motion=est_m,
                            estimated_bits_residual=_bits(model.res_density, y),
                            actual_bits_motion=8 * len(m_payload),
                            actual_bits_residual=8 * len(r_payload),
                        )
                    )
                ref = res["x_hat"]
                recons.append(crop_to(_to_frame(ref), dims))
    header = StreamHeader(w, h, gop_size, len(frames), checkpoint.lambda_id, vmax, stream_flags(ab))
    return EncodeResult(write_bitstream(coded, header), reports, recons, flows, warped)


def decode_video(bitstream: bytes, checkpoint: Checkpoint) -> list[np.ndarray]:
    """Rebuild frames from the bitstream and the checkpoint weights alone."""
    header, frames = read_bitstream(bitstream)
    model: VideoCodec = checkpoint.model
    model.eval()
    if header.lambda_id != checkpoint.lambda_id:
        raise BitstreamError(
            f"stream was coded with lambda id {header.lambda_id}, checkpoint has {checkpoint.lambda_id}"
        )
    if header.flags != stream_flags(model.ablation):
        raise BitstreamError(f"stream feature flags {header.flags:#x} do not match the checkpoint")
    if len(header.vmax) != 3:
        raise BitstreamError(f"expected 3 vmax entries, found {len(header.vmax)}")
    vm_motion, vm_res, vm_intra = header.vmax
    ph, pw = padded_dims(header.height, header.width)
    cy = model.config.residual_latent
    res_shape = (cy, ph // 16, pw // 16)
    mv_shape = (128, ph // 16, pw // 16)
    out = []
    ref = None
    with torch.no_grad():
        for i, fr in enumerate(frames):
            if fr.frame_type is FrameRole.INTRA:
                y = range_decode(fr.residual_payload, model.intra_density, res_shape, vm_intra)
                ref = model.decode_intra(torch.from_numpy(y).float()[None])
            else:
                if ref is None:
                    raise BitstreamError(f"frame {i} is predicted but no reference precedes it")
                y = torch.from_numpy(range_decode(fr.residual_payload, model.res_density, res_shape, vm_res)).float()
                m = None
                if model.ablation.use_motion:
                    if model.ablation.use_mv_codec:
                        m = range_decode(fr.motion_payload, model.mv_density, mv_shape, vm_motion)
                    else:
                        m = flat_decode(fr.motion_payload, (2, ph, pw))
                    m = torch.from_numpy(m).float()[None]
                ref = model.decode_predicted(ref, m, y[None])
            out.append(crop_to(_to_frame(ref), (header.height, header.width)))
    return out
