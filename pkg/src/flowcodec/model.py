"""The predictive video codec: flow, motion coding, compensation, residual coding."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .entropy.density import FactorizedDensity
from .entropy.quantize import TRAIN, quantize, round_half_away
from .flow import FlowNet
from .gdn import project_gdn
from .motion_comp import McNetConfig, RefineNet, motion_compensate
from .transforms import (
    MOTION_LATENT_CHANNELS,
    MotionDecoder,
    MotionEncoder,
    ResidualDecoder,
    ResidualEncoder,
    reconstruct_frame,
)

FLOW_STEP = 0.25  # raw-flow quantizer when the motion codec is disabled
GROUPS = ("motion", "residual", "intra")


@dataclass(frozen=True)
class AblationConfig:
    use_mc_net: bool = True
    use_mv_codec: bool = True
    joint_flow_training: bool = True
    use_buffer: bool = True
    use_motion: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        return cls(**{k: bool(v) for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ModelConfig:
    flow_channels: int = 32
    flow_levels: int = 5
    mc_channels: int = 64
    mc_blocks: int = 2
    residual_channels: int = 128
    residual_latent: int = 96

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in d.items() if k in cls.__dataclass_fields__})


# Reduced widths for single-core CPU runs; the motion latent stays at 128 channels.
TOY_CONFIG = ModelConfig(
    flow_channels=16, flow_levels=5, mc_channels=32, mc_blocks=1, residual_channels=64, residual_latent=64
)


class VideoCodec(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig(), ablation: AblationConfig = AblationConfig()):
        super().__init__()
        self.config = config
        self.ablation = ablation
        self.flow_net = FlowNet(config.flow_channels, max_levels=config.flow_levels)
        self.mv_encoder = MotionEncoder()
        self.mv_decoder = MotionDecoder()
        self.mv_density = FactorizedDensity(MOTION_LATENT_CHANNELS)
        self.mc_net = RefineNet(McNetConfig(config.mc_blocks, config.mc_channels))
        self.res_encoder = ResidualEncoder(config.residual_channels, config.residual_latent)
        self.res_decoder = ResidualDecoder(config.residual_channels, config.residual_latent)
        self.res_density = FactorizedDensity(config.residual_latent)
        self.intra_encoder = ResidualEncoder(config.residual_channels, config.residual_latent)
        self.intra_decoder = ResidualDecoder(config.residual_channels, config.residual_latent)
        self.intra_density = FactorizedDensity(config.residual_latent)
        if not ablation.joint_flow_training:
            self.flow_net.requires_grad_(False)

    def densities(self) -> dict[str, FactorizedDensity]:
        return {"motion": self.mv_density, "residual": self.res_density, "intra": self.intra_density}

    def project(self) -> None:
        """Restore GDN parameter constraints after an optimizer step."""
        project_gdn(self)

    # -- shared prediction/reconstruction path (used by encoder and decoder) ---

    def decode_flow(self, motion_hat: torch.Tensor) -> torch.Tensor:
        if self.ablation.use_mv_codec:
            return self.mv_decoder(motion_hat)
        return motion_hat * FLOW_STEP

    def predict(self, reference: torch.Tensor, flow_hat: torch.Tensor):
        """Return (predicted frame, warped frame)."""
        refine = self.mc_net if self.ablation.use_mc_net else None
        return motion_compensate(reference, flow_hat, refine, return_warped=True)

    # -- training-time forward passes ------------------------------------------

    def forward_intra(self, x: torch.Tensor, mode: str = TRAIN) -> dict:
        y = self.intra_encoder(x)
        y_hat = quantize(y, mode)
        x_hat = self.intra_decoder(y_hat)
        bits = -torch.log2(self.intra_density.likelihood(y_hat)).sum(dim=(1, 2, 3))
        return {"x_hat": x_hat, "y_hat": y_hat, "bits_residual": bits, "bits_motion": torch.zeros_like(bits)}

    def forward_predicted(self, x: torch.Tensor, reference: torch.Tensor, mode: str = TRAIN) -> dict:
        """One P-frame through motion estimation, compression and reconstruction.

        ``x_hat`` in the result is unclamped; callers clamp for display.
        """
        ab = self.ablation
        n = x.shape[0]
        out: dict = {}
        if ab.use_motion:
            if ab.joint_flow_training:
                flow = self.flow_net(x, reference)
            else:
                with torch.no_grad():
                    flow = self.flow_net(x, reference)
            if ab.use_mv_codec:
                m_hat = quantize(self.mv_encoder(flow), mode)
                bits_m = -torch.log2(self.mv_density.likelihood(m_hat)).sum(dim=(1, 2, 3))
            else:
                scaled = flow / FLOW_STEP
                m_hat = scaled + (round_half_away(scaled) - scaled).detach()
                bits_m = raw_flow_bits(m_hat.detach())
            flow_hat = self.decode_flow(m_hat)
            x_bar, warped = self.predict(reference, flow_hat)
            out.update(flow=flow, flow_hat=flow_hat, m_hat=m_hat, warped=warped)
        else:
            x_bar = torch.zeros_like(x)
            bits_m = x.new_zeros(n)
        y_hat = quantize(self.res_encoder(x - x_bar), mode)
        r_hat = self.res_decoder(y_hat)
        bits_y = -torch.log2(self.res_density.likelihood(y_hat)).sum(dim=(1, 2, 3))
        out.update(
            x_bar=x_bar,
            y_hat=y_hat,
            x_hat=reconstruct_frame(x_bar, r_hat, clamp=False),
            bits_motion=bits_m,
            bits_residual=bits_y,
        )
        return out

    # -- inference -------------------------------------------------------------

    @torch.no_grad()
    def analyse_predicted(self, x: torch.Tensor, reference: torch.Tensor) -> dict:
        """Encoder-side analysis: integer latents plus the reconstruction the decoder will see."""
        ab = self.ablation
        out: dict = {}
        if ab.use_motion:
            flow = self.flow_net(x, reference)
            if ab.use_mv_codec:
                m_hat = round_half_away(self.mv_encoder(flow))
            else:
                m_hat = round_half_away(flow / FLOW_STEP)
            flow_hat = self.decode_flow(m_hat)
            x_bar, warped = self.predict(reference, flow_hat)
            out.update(flow=flow, flow_hat=flow_hat, m_hat=m_hat, warped=warped)
        else:
            x_bar = torch.zeros_like(x)
        y_hat = round_half_away(self.res_encoder(x - x_bar))
        out.update(x_bar=x_bar, y_hat=y_hat, x_hat=self.synthesize_predicted(x_bar, y_hat))
        return out

    @torch.no_grad()
    def synthesize_predicted(self, x_bar: torch.Tensor, y_hat: torch.Tensor) -> torch.Tensor:
        return reconstruct_frame(x_bar, self.res_decoder(y_hat))

    @torch.no_grad()
    def decode_predicted(self, reference: torch.Tensor, m_hat: torch.Tensor | None, y_hat: torch.Tensor) -> torch.Tensor:
        if self.ablation.use_motion:
            x_bar, _ = self.predict(reference, self.decode_flow(m_hat))
        else:
            x_bar = torch.zeros_like(reference)
        return self.synthesize_predicted(x_bar, y_hat)

    @torch.no_grad()
    def analyse_intra(self, x: torch.Tensor) -> dict:
        y_hat = round_half_away(self.intra_encoder(x))
        return {"y_hat": y_hat, "x_hat": self.decode_intra(y_hat)}

    @torch.no_grad()
    def decode_intra(self, y_hat: torch.Tensor) -> torch.Tensor:
        return self.intra_decoder(y_hat).clamp(0.0, 1.0)

    # -- entropy-model freezing ----------------------------------------------

    @torch.no_grad()
    def freeze(self, frames: list[torch.Tensor] | None = None, margin: int = 4) -> tuple[int, ...]:
        """Fix each density's coding range.

        The range covers the largest rounded latent seen on ``frames`` (a list
        of (N, 3, H, W) clips) plus ``margin`` and the density's own 1e-4 tail.
        Returns the ``(motion, residual, intra)`` vmax table.
        """
        seen = {g: 0 for g in GROUPS}
        for clip in frames or []:
            intra = self.analyse_intra(clip[:1])
            seen["intra"] = max(seen["intra"], int(intra["y_hat"].abs().max()))
            ref = intra["x_hat"]
            for t in range(1, clip.shape[0]):
                res = self.analyse_predicted(clip[t : t + 1], ref)
                if "m_hat" in res and self.ablation.use_mv_codec:
                    seen["motion"] = max(seen["motion"], int(res["m_hat"].abs().max()))
                seen["residual"] = max(seen["residual"], int(res["y_hat"].abs().max()))
                ref = res["x_hat"]
        table = []
        for g, density in self.densities().items():
            vmax = max(seen[g] + margin, density.tail_extent())
            density.freeze(vmax)
            table.append(vmax)
        return tuple(table)

    def vmax_table(self) -> tuple[int, ...]:
        return tuple(int(d.vmax) for d in self.densities().values())

    def describe(self) -> dict:
        return {"model": asdict(self.config), "ablation": asdict(self.ablation)}


def raw_flow_bits(flow_steps: torch.Tensor) -> torch.Tensor:
    """Bits for flat coding of quarter-pel flow, per sample (payload header included)."""
    n = flow_steps.shape[0]
    per = flow_steps[0].numel()
    vmax = flow_steps.abs().reshape(n, -1).amax(dim=1)
    return per * torch.log2(2 * vmax + 1) + 10 * 8


def bits_to_bpp(bits: torch.Tensor, height: int, width: int) -> torch.Tensor:
    return bits / (height * width)
