import torch
import torch.nn as nn
import torch.nn.functional as F

BETA_MIN = 1e-6


class GDN(nn.Module):
    """Generalized divisive normalization.

    ``y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``; with ``inverse=True``
    the normalizer multiplies instead (IGDN). ``beta`` and ``gamma`` are plain
    parameters kept feasible by :meth:`project`, which the trainer calls after
    every optimizer step.
    """

    def __init__(self, channels: int, inverse: bool = False, gamma_init: float = 0.1):
        super().__init__()
        self.inverse = inverse
        self.beta = nn.Parameter(torch.ones(channels))
        self.gamma = nn.Parameter(gamma_init * torch.eye(channels))

    def normalizer(self, x: torch.Tensor) -> torch.Tensor:
        c = x.shape[1]
        return F.conv2d(x * x, self.gamma.view(c, c, 1, 1), self.beta)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.beta.shape[0]:
            raise ValueError(f"expected {self.beta.shape[0]} channels, got {x.shape[1]}")
        norm = torch.sqrt(self.normalizer(x))
        return x * norm if self.inverse else x / norm

    @torch.no_grad()
    def project(self) -> None:
        self.beta.clamp_(min=BETA_MIN)
        self.gamma.clamp_(min=0.0)


def project_gdn(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, GDN):
            m.project()
