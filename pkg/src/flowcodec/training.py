"""Joint rate-distortion training with a buffer of reconstructed references.

An epoch walks every clip frame by frame. Round 0 intra-codes the first frame
of each clip; round ``t`` codes frame ``t`` of every clip against the
reconstruction of frame ``t - 1`` written to the buffer in round ``t - 1``.
During the first ``warmup_epochs`` epochs (and always when ``use_buffer`` is
off) the ground-truth previous frame serves as the reference instead.

For the first ``motion_warmup_steps`` updates the P-frame loss also carries
``lam * MSE(x, warped)``, which keeps the motion path producing useful warps
while the residual codec is still weak.
"""

from __future__ import annotations

import copy
import logging
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import LAMBDAS, save_checkpoint
from .entropy.quantize import TRAIN
from .frame_io import read_keyvalue
from .model import TOY_CONFIG, AblationConfig, ModelConfig, VideoCodec

log = logging.getLogger(__name__)


def rd_loss(x, x_hat, est_bits_motion, est_bits_residual, lam: float):
    """``lam * MSE + bits / (W * H)``, rate normalized per pixel of each frame.

    Works on (B, 3, H, W) tensors with per-batch bit totals, or on single
    (H, W, 3) numpy frames with scalar bits.
    """
    if isinstance(x, torch.Tensor):
        if x.shape != x_hat.shape:
            raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
        n = x.shape[0] if x.dim() == 4 else 1
        pixels = n * x.shape[-1] * x.shape[-2]
        distortion = F.mse_loss(x_hat, x)
    else:
        x, x_hat = np.asarray(x, np.float64), np.asarray(x_hat, np.float64)
        if x.shape != x_hat.shape:
            raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
        pixels = x.shape[0] * x.shape[1]
        distortion = float(np.mean((x - x_hat) ** 2))
    rate = (est_bits_motion + est_bits_residual) / pixels
    return lam * distortion + rate


class ReconstructionBuffer:
    """Detached reconstructions keyed by ``(clip_id, frame_index)``."""

    def __init__(self):
        self._frames: dict[tuple[int, int], torch.Tensor] = {}

    def put(self, clip_id: int, t: int, frame: torch.Tensor) -> None:
        self._frames[(clip_id, t)] = frame.detach().clone()

    def get(self, clip_id: int, t: int) -> torch.Tensor:
        try:
            return self._frames[(clip_id, t)]
        except KeyError:
            raise KeyError(
                f"no buffered reconstruction for clip {clip_id} frame {t}; "
                "run a warm-start pass (intra round / ground-truth references) first"
            ) from None

    def __contains__(self, key) -> bool:
        return key in self._frames

    def __len__(self) -> int:
        return len(self._frames)


class PlateauScheduler:
    """Divide the learning rate by 10 when the loss stops improving.

    Compares the median loss of the latest ``window`` steps with that of the
    window before it; an improvement under ``tol`` (relative) counts as a
    plateau.
    """

    def __init__(self, optimizer, window: int = 200, tol: float = 0.005, max_drops: int = 3):
        self.optimizer = optimizer
        self.window = window
        self.tol = tol
        self.max_drops = max_drops
        self.drops = 0
        self.history: list[float] = []

    def step(self, loss: float) -> bool:
        self.history.append(loss)
        if self.drops >= self.max_drops or len(self.history) < 2 * self.window:
            return False
        prev = statistics.median(self.history[-2 * self.window : -self.window])
        cur = statistics.median(self.history[-self.window :])
        if prev - cur < self.tol * abs(prev):
            for group in self.optimizer.param_groups:
                group["lr"] /= 10.0
            self.drops += 1
            self.history.clear()
            log.info("loss plateau: learning rate -> %g", self.optimizer.param_groups[0]["lr"])
            return True
        return False

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]


@dataclass
class TrainConfig:
    lambdas: tuple[float, ...] = LAMBDAS
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    plateau_window: int = 200
    plateau_tol: float = 0.005
    max_lr_drops: int = 3
    grad_clip: float = 0.0
    motion_warmup_steps: int = 0
    crop: int = 256
    warmup_epochs: int = 1
    seed: int = 0
    preset: str = "full"
    dataset: str = "synthetic"
    num_clips: int = 64
    clip_frames: int = 5
    max_speed: float = 3.0
    flow_pretrain_steps: int = 0
    flow_pretrain_lr: float = 1e-3
    flow_weights: str = ""
    calibration_clips: int = 8
    use_mc_net: bool = True
    use_mv_codec: bool = True
    joint_flow_training: bool = True
    use_buffer: bool = True
    use_motion: bool = True

    @property
    def ablation(self) -> AblationConfig:
        return AblationConfig(
            self.use_mc_net, self.use_mv_codec, self.joint_flow_training, self.use_buffer, self.use_motion
        )

    @property
    def model_config(self) -> ModelConfig:
        if self.preset == "toy":
            return TOY_CONFIG
        if self.preset == "full":
            return ModelConfig()
        raise ValueError(f"unknown model preset {self.preset!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise KeyError(f"unknown training option {key!r}")
            kwargs[key] = _coerce(types[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_mapping(read_keyvalue(path))


def _coerce(type_name: str, raw):
    if not isinstance(raw, str):
        return tuple(raw) if type_name.startswith("tuple") else raw
    if type_name == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if type_name == "int":
        return int(raw)
    if type_name == "float":
        return float(raw)
    if type_name.startswith("tuple"):
        return tuple(float(v) for v in raw.replace(",", " ").split())
    return raw


@dataclass
class StepResult:
    step: int
    round: int
    loss: float
    distortion: float
    rate_bpp: float
    bits_motion: float
    bits_residual: float
    lr: float


def _as_clip_tensor(clips) -> torch.Tensor:
    """(N, T, H, W, 3) array -> (N, T, 3, H, W) float tensor."""
    arr = np.asarray(clips, dtype=np.float32)
    if arr.ndim != 5 or arr.shape[-1] != 3 or arr.shape[1] < 2:
        raise ValueError(f"expected clips of shape (N, T>=2, H, W, 3), got {arr.shape}")
    return torch.from_numpy(arr).permute(0, 1, 4, 2, 3).contiguous()


class Trainer:
    """Single-writer training loop for one lambda."""

    def __init__(self, model: VideoCodec, clips, lam: float, config: TrainConfig):
        self.model = model
        self.lam = float(lam)
        self.config = config
        self.clips = _as_clip_tensor(clips)
        self.rng = np.random.default_rng(config.seed)
        torch.manual_seed(config.seed)
        self._params = [p for p in model.parameters() if p.requires_grad]
        self.optimizer = torch.optim.Adam(self._params, lr=config.lr, betas=(config.beta1, config.beta2))
        self.scheduler = PlateauScheduler(
            self.optimizer, config.plateau_window, config.plateau_tol, config.max_lr_drops
        )
        self.buffer = ReconstructionBuffer()
        self.step_count = 0
        self.epoch = 0
        self.history: list[StepResult] = []
        self._plan = self._schedule()
        self._epoch_clips: torch.Tensor | None = None

    @property
    def num_clips(self) -> int:
        return self.clips.shape[0]

    @property
    def clip_frames(self) -> int:
        return self.clips.shape[1]

    @property
    def warm(self) -> bool:
        return self.epoch < self.config.warmup_epochs

    def _crop_epoch(self) -> torch.Tensor:
        n, t, c, h, w = self.clips.shape
        size = min(self.config.crop, h, w)
        size -= size % 16
        if (h, w) == (size, size):
            return self.clips
        out = torch.empty(n, t, c, size, size)
        for i in range(n):
            top = int(self.rng.integers(0, h - size + 1))
            left = int(self.rng.integers(0, w - size + 1))
            out[i] = self.clips[i, :, :, top : top + size, left : left + size]
        return out

    def _schedule(self):
        b = self.config.batch_size
        while True:
            self._epoch_clips = self._crop_epoch()
            for t in range(self.clip_frames):
                order = self.rng.permutation(self.num_clips)
                for start in range(0, len(order), b):
                    yield t, order[start : start + b].tolist()
            self.epoch += 1

    def reference(self, clip_ids: list[int], t: int) -> torch.Tensor:
        if self.warm or not self.model.ablation.use_buffer:
            return self._epoch_clips[clip_ids, t - 1]
        return torch.stack([self.buffer.get(c, t - 1) for c in clip_ids])

    def train_step(self, clip_ids: list[int], t: int) -> StepResult:
        """One gradient update on frame ``t`` of the given clips."""
        self.model.train()
        x = self._epoch_clips[clip_ids, t]
        n, _, h, w = x.shape
        if t == 0:
            out = self.model.forward_intra(x, TRAIN)
        else:
            out = self.model.forward_predicted(x, self.reference(clip_ids, t), TRAIN)
        bits_m = out["bits_motion"].sum()
        bits_y = out["bits_residual"].sum()
        distortion = F.mse_loss(out["x_hat"], x)
        rate = (bits_m + bits_y) / (n * h * w)
        loss = self.lam * distortion + rate
        if t > 0 and "warped" in out and self.step_count < self.config.motion_warmup_steps:
            # anchor the motion path to warping well before the full loss can route around it
            loss = loss + self.lam * F.mse_loss(out["warped"], x)
        assert distortion.item() >= 0.0 and rate.item() >= 0.0, "negative loss term"
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {self.step_count}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self._params, self.config.grad_clip)
        self.optimizer.step()
        self.model.project()
        recon = out["x_hat"].detach().clamp(0.0, 1.0)
        for i, c in enumerate(clip_ids):
            self.buffer.put(c, t, recon[i])
        if t > 0:
            self.scheduler.step(loss.item())
        result = StepResult(
            self.step_count, t, loss.item(), distortion.item(), rate.item(),
            bits_m.item(), bits_y.item(), self.scheduler.lr,
        )
        self.history.append(result)
        self.step_count += 1
        return result

    def step(self) -> StepResult:
        t, clip_ids = next(self._plan)
        return self.train_step(clip_ids, t)

    def run(self, steps: int, log_every: int = 100) -> list[StepResult]:
        results = []
        for _ in range(steps):
            r = self.step()
            results.append(r)
            if log_every and r.step % log_every == 0:
                log.info(
                    "lambda %g step %d round %d loss %.4f mse %.5f bpp %.4f lr %g",
                    self.lam, r.step, r.round, r.loss, r.distortion, r.rate_bpp, r.lr,
                )
        return results


def pretrain_flow(flow_net, frames, flows, steps: int, lr: float = 1e-3, batch_size: int = 8, seed: int = 0):
    """Supervised training of the flow net on ground-truth pairs.

    ``frames`` is (N, T, H, W, 3) and ``flows`` (N, T-1, H, W, 2), as produced
    by :func:`flowcodec.synthetic.make_dataset`. Every pyramid level is
    supervised with the ground truth downsampled to its resolution; a plain
    full-resolution endpoint error tends to stall at the all-zero solution.
    Returns the full-resolution endpoint error per step.
    """
    from .flow import downsample_flow

    clips = _as_clip_tensor(frames)
    gt = torch.from_numpy(np.asarray(flows, np.float32)).permute(0, 1, 4, 2, 3)
    n, t = gt.shape[:2]
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(flow_net.parameters(), lr=lr)
    flow_net.train()
    losses = []
    for _ in range(steps):
        ci = rng.integers(0, n, size=batch_size)
        ti = rng.integers(1, t + 1, size=batch_size)
        target, ref = clips[ci, ti], clips[ci, ti - 1]
        truth = gt[ci, ti - 1]
        pyramid = flow_net(target, ref, return_pyramid=True)
        loss = sum(((pred - downsample_flow(truth, 2**k)) ** 2).sum(1).mean() for k, pred in enumerate(pyramid))
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(torch.linalg.vector_norm(pyramid[0].detach() - truth, dim=1).mean().item())
    return losses


def build_dataset(config: TrainConfig):
    """Return (frames, flows-or-None) for the configured dataset."""
    if config.dataset == "synthetic":
        from .synthetic import make_dataset

        size = min(config.crop, 256)
        return make_dataset(config.num_clips, config.clip_frames, size, config.seed, config.max_speed)
    from .frame_io import load_sequence

    root = Path(config.dataset)
    clips = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        frames = load_sequence(sub)
        for start in range(0, len(frames) - config.clip_frames + 1, config.clip_frames):
            clips.append(np.stack(frames[start : start + config.clip_frames]))
    if not clips:
        raise ValueError(f"no clips of {config.clip_frames} frames found under {root}")
    return np.stack(clips), None


def initial_model(config: TrainConfig, frames=None, flows=None) -> VideoCodec:
    """Seeded model, with flow weights imported or pretrained per config."""
    torch.manual_seed(config.seed)
    model = VideoCodec(config.model_config, config.ablation)
    if config.flow_weights:
        from .flow import load_flow_weights

        load_flow_weights(model.flow_net, config.flow_weights)
    elif config.flow_pretrain_steps:
        if flows is None:
            raise ValueError("flow pretraining needs ground-truth flow (synthetic dataset)")
        requires = [p.requires_grad for p in model.flow_net.parameters()]
        model.flow_net.requires_grad_(True)
        pretrain_flow(model.flow_net, frames, flows, config.flow_pretrain_steps, config.flow_pretrain_lr, seed=config.seed)
        for p, r in zip(model.flow_net.parameters(), requires):
            p.requires_grad_(r)
    return model


def train_one(config: TrainConfig, lam: float, frames, flows=None, init_state: dict | None = None):
    """Train a single lambda; returns (frozen model, trainer)."""
    model = initial_model(config, frames, flows) if init_state is None else _model_from_state(config, init_state)
    trainer = Trainer(model, frames, lam, config)
    trainer.run(config.steps)
    model.eval()
    calib = _as_clip_tensor(frames[: config.calibration_clips])
    model.freeze(list(calib))
    return model, trainer


def _model_from_state(config: TrainConfig, state: dict) -> VideoCodec:
    model = VideoCodec(config.model_config, config.ablation)
    model.load_state_dict(state)
    if not config.ablation.joint_flow_training:
        model.flow_net.requires_grad_(False)
    return model


def train_schedule(config: TrainConfig, out_dir, frames=None, flows=None) -> list[Path]:
    """Train one independent model per lambda and write a checkpoint for each.

    All lambdas start from the same seeded initialization (including any
    flow pretraining).
    """
    if frames is None:
        frames, flows = build_dataset(config)
    if len(frames) == 0:
        raise ValueError("dataset is empty")
    out_dir = Path(out_dir)
    init = initial_model(config, frames, flows)
    init_state = copy.deepcopy(init.state_dict())
    paths = []
    for lam in config.lambdas:
        model, trainer = train_one(config, lam, frames, flows, init_state)
        tail = [r.loss for r in trainer.history[-50:] if r.round > 0]
        extra = {
            "train_config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
            "final_loss": float(np.mean(tail)) if tail else float("nan"),
            "steps": trainer.step_count,
        }
        paths.append(save_checkpoint(out_dir / f"lambda_{int(lam)}.pt", model, lam, extra))
        log.info("lambda %g done: final loss %.4f", lam, extra["final_loss"])
    return paths
