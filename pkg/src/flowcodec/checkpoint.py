"""Versioned checkpoint files: named tensors, their shapes, configs and lambda."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .model import AblationConfig, ModelConfig, VideoCodec

FORMAT_VERSION = 1
LAMBDAS = (256, 512, 1024, 2048)
CUSTOM_LAMBDA_ID = 255


def lambda_id(lam: float) -> int:
    return LAMBDAS.index(int(lam)) if float(lam) in LAMBDAS else CUSTOM_LAMBDA_ID


@dataclass
class Checkpoint:
    model: VideoCodec
    lam: float
    extra: dict = field(default_factory=dict)

    @property
    def lambda_id(self) -> int:
        return lambda_id(self.lam)


def save_checkpoint(path: str | Path, model: VideoCodec, lam: float, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    torch.save(
        {
            "format_version": FORMAT_VERSION,
            "lambda": float(lam),
            "lambda_id": lambda_id(lam),
            "model_config": asdict(model.config),
            "ablation": asdict(model.ablation),
            "manifest": {k: list(v.shape) for k, v in state.items()},
            "state_dict": state,
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {version}")
    model = VideoCodec(ModelConfig.from_dict(blob["model_config"]), AblationConfig.from_dict(blob["ablation"]))
    state = blob["state_dict"]
    for name, shape in blob["manifest"].items():
        if list(state[name].shape) != list(shape):
            raise ValueError(f"{path}: tensor {name} has shape {list(state[name].shape)}, manifest says {shape}")
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(model, blob["lambda"], blob.get("extra", {}))
