"""Learned per-channel factorized density used to price and code latents."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

P_MIN = 2.0 ** -16
TABLE_PRECISION = 16
TAIL = 60.0
MAX_VMAX = 4096


class FactorizedDensity(nn.Module):
    """Monotone per-channel CDF built from K affine + ``x + a*tanh(x)`` stages.

    Matrices are passed through softplus so every stage is nondecreasing,
    which makes the composed CDF ``sigmoid(f(x))`` nondecreasing as well.
    """

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 4.0, p_min: float = P_MIN):
        super().__init__()
        self.channels = channels
        self.p_min = p_min
        widths = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(widths) - 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(widths) - 1):
            init = math.log(math.expm1(1.0 / scale / widths[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, widths[i + 1], widths[i]), init)))
            self.biases.append(nn.Parameter(torch.empty(channels, widths[i + 1], 1).uniform_(-0.5, 0.5)))
            if i < len(widths) - 2:
                self.factors.append(nn.Parameter(torch.zeros(channels, widths[i + 1], 1)))
        self.register_buffer("vmax", torch.tensor(-1, dtype=torch.int64))
        self._table_cache: tuple | None = None

    def logits_cdf(self, values: torch.Tensor) -> torch.Tensor:
        """``values`` has shape (C, 1, N); returns CDF logits of the same shape."""
        logits = values
        dt = values.dtype
        for i, matrix in enumerate(self.matrices):
            logits = torch.matmul(F.softplus(matrix.to(dt)), logits) + self.biases[i].to(dt)
            if i < len(self.factors):
                logits = logits + torch.tanh(self.factors[i].to(dt)) * torch.tanh(logits)
        return logits

    def cdf(self, values: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits_cdf(values))

    def _per_channel(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.dim() == 3:
            latent = latent.unsqueeze(0)
        if latent.shape[1] != self.channels:
            raise ValueError(f"density has {self.channels} channels, latent has {latent.shape[1]}")
        return latent.transpose(0, 1).reshape(self.channels, 1, -1)

    def likelihood(self, latent: torch.Tensor) -> torch.Tensor:
        """Interval mass ``c(v + 0.5) - c(v - 0.5)`` per element, floored at ``p_min``.

        Accepts (C, H, W) or (B, C, H, W) and returns the same shape.
        """
        flat = self._per_channel(latent)
        lower = self.logits_cdf(flat - 0.5)
        upper = self.logits_cdf(flat + 0.5)
        # evaluate on the side of the sigmoid where it is not saturated
        sign = -torch.sign(lower + upper).detach()
        sign = torch.where(sign == 0, torch.ones_like(sign), sign)
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        p = torch.clamp(p, min=self.p_min)
        shape = latent.shape if latent.dim() == 4 else (1,) + tuple(latent.shape)
        p = p.reshape(shape[1], shape[0], *shape[2:]).transpose(0, 1)
        return p if latent.dim() == 4 else p[0]

    def estimate_bits(self, latent: torch.Tensor) -> torch.Tensor:
        return -torch.log2(self.likelihood(latent)).sum()

    # -- inference-time tables -------------------------------------------------

    @torch.no_grad()
    def pmf(self, vmax: int) -> np.ndarray:
        """float64 masses of the integers -vmax..vmax, shape (C, 2*vmax+1)."""
        n = torch.arange(-vmax, vmax + 1, dtype=torch.float64)
        grid = n.view(1, 1, -1).expand(self.channels, 1, -1)
        lower = torch.sigmoid(self.logits_cdf(grid - 0.5))
        upper = torch.sigmoid(self.logits_cdf(grid + 0.5))
        return (upper - lower)[:, 0].clamp(min=0.0).numpy()

    @torch.no_grad()
    def tail_extent(self, tail_mass: float = 1e-4) -> int:
        """Smallest V such that every channel keeps ``1 - tail_mass`` inside [-V-0.5, V+0.5]."""
        v = torch.arange(0, int(TAIL) + 1, dtype=torch.float64)
        grid = v.view(1, 1, -1).expand(self.channels, 1, -1)
        inside = torch.sigmoid(self.logits_cdf(grid + 0.5)) - torch.sigmoid(self.logits_cdf(-grid - 0.5))
        ok = (inside[:, 0] >= 1.0 - tail_mass).all(dim=0)
        idx = torch.nonzero(ok)
        return int(idx[0]) if len(idx) else int(TAIL)

    def freeze(self, vmax: int) -> None:
        if not 0 <= vmax <= MAX_VMAX:
            raise ValueError(f"vmax must lie in [0, {MAX_VMAX}], got {vmax}")
        self.vmax.fill_(int(vmax))
        self._table_cache = None

    def coding_tables(self, vmax: int | None = None) -> "CodingTables":
        if vmax is None:
            vmax = int(self.vmax)
            if vmax < 0:
                raise RuntimeError("density is not frozen; call freeze(vmax) or pass vmax")
        with torch.no_grad():
            params = torch.cat([p.detach().flatten().double() for p in self.parameters()])
        key = (vmax, params.numpy().tobytes())
        if self._table_cache is None or self._table_cache[0] != key:
            self._table_cache = (key, CodingTables.from_pmf(self.pmf(vmax), vmax))
        return self._table_cache[1]


class CodingTables:
    """Integer cumulative frequency tables, one per channel.

    Symbols ``0 .. 2*vmax`` stand for the values ``-vmax .. vmax``; symbol
    ``2*vmax + 1`` is the escape carrying the leftover tail mass. Every
    symbol has a count of at least one and each table sums to 2**16.
    """

    def __init__(self, cumulative: np.ndarray, vmax: int):
        self.cumulative = cumulative
        self.vmax = vmax
        self.total = 1 << TABLE_PRECISION
        self.escape = 2 * vmax + 1
        self.cum_lists = [row.tolist() for row in cumulative]

    @property
    def channels(self) -> int:
        return self.cumulative.shape[0]

    @classmethod
    def from_pmf(cls, pmf: np.ndarray, vmax: int) -> "CodingTables":
        escape = np.clip(1.0 - pmf.sum(axis=1, keepdims=True), 0.0, None)
        probs = np.concatenate([pmf, escape], axis=1)
        counts = quantize_counts(probs, TABLE_PRECISION)
        cum = np.zeros((counts.shape[0], counts.shape[1] + 1), dtype=np.int64)
        np.cumsum(counts, axis=1, out=cum[:, 1:])
        return cls(cum, vmax)

    def probabilities(self) -> np.ndarray:
        return np.diff(self.cumulative, axis=1) / self.total


def quantize_counts(probs: np.ndarray, precision: int) -> np.ndarray:
    """Integer counts summing to ``2**precision`` with every entry >= 1."""
    total = 1 << precision
    nsym = probs.shape[1]
    if nsym > total // 2:
        raise ValueError("too many symbols for the table precision")
    probs = probs / np.maximum(probs.sum(axis=1, keepdims=True), 1e-300)
    counts = 1 + np.floor(probs * (total - nsym)).astype(np.int64)
    leftover = total - counts.sum(axis=1)
    rows = np.arange(probs.shape[0])
    counts[rows, probs.argmax(axis=1)] += leftover
    return counts
