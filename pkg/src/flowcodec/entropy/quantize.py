import torch

TRAIN = "train"
INFERENCE = "inference"


def round_half_away(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def quantize(latent: torch.Tensor, mode: str, generator: torch.Generator | None = None) -> torch.Tensor:
    """Additive U[-0.5, 0.5) noise in training, half-away-from-zero rounding otherwise."""
    if mode == TRAIN:
        noise = torch.rand(latent.shape, generator=generator, dtype=latent.dtype, device=latent.device)
        return latent + (noise - 0.5)
    if mode == INFERENCE:
        return round_half_away(latent)
    raise ValueError(f"unknown quantization mode {mode!r}")
