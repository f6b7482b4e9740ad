"""Latent transform coding: analysis/synthesis transforms built from cascaded
depth-wise conv blocks, with learned per-channel rate scalers.

The transforms keep the latent resolution; rate variability comes from
multiplying the analysis output by q_enc[q] and the quantized code by
q_dec[q] before synthesis. Scalers are stored as log values so they stay
strictly positive under training.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig


class RateIndexError(ValueError):
    pass


class DepthConvBlock(nn.Module):
    """Depth-wise 3x3 followed by a pointwise expansion, residual."""

    def __init__(self, channels: int, hidden_mult: int = 2):
        super().__init__()
        hidden = channels * hidden_mult
        self.dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.pw1 = nn.Conv2d(channels, hidden, 1)
        self.pw2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        h = self.dw(x)
        h = self.pw2(F.gelu(self.pw1(h)))
        return x + h


class AnalysisTransform(nn.Module):
    """Latent -> code, before rate scaling."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = cfg.latent_channels
        self.blocks = nn.Sequential(
            DepthConvBlock(n, cfg.transform_hidden_mult),
            DepthConvBlock(n, cfg.transform_hidden_mult),
            nn.Conv2d(n, n, 1),
        )

    def forward(self, latent):
        return self.blocks(latent)


class SynthesisTransform(nn.Module):
    """Descaled code -> latent."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = cfg.latent_channels
        self.blocks = nn.Sequential(
            nn.Conv2d(n, n, 1),
            DepthConvBlock(n, cfg.transform_hidden_mult),
            DepthConvBlock(n, cfg.transform_hidden_mult),
        )

    def forward(self, code):
        return self.blocks(code)


class RateScaler(nn.Module):
    """Per-channel encode/decode scaling vectors, one pair per rate index.

    Initialized as a geometric ladder (coarse to fine) with q_dec = 1/q_enc,
    both learned independently afterwards.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        q = cfg.num_rate_levels
        n = cfg.latent_channels
        ladder = torch.linspace(-0.7, 1.1, q)  # log scale, ~0.5x to ~3x
        self.log_q_enc = nn.Parameter(ladder[:, None].repeat(1, n).clone())
        self.log_q_dec = nn.Parameter((-ladder)[:, None].repeat(1, n).clone())
        self.num_levels = q

    def check(self, q: int) -> int:
        if not isinstance(q, int) or isinstance(q, bool):
            raise RateIndexError(f"rate index must be an int, got {q!r}")
        if not 0 <= q < self.num_levels:
            raise RateIndexError(f"rate index {q} outside [0, {self.num_levels})")
        return q

    def enc_scale(self, q: int) -> torch.Tensor:
        return torch.exp(self.log_q_enc[self.check(q)])[None, :, None, None]

    def dec_scale(self, q: int) -> torch.Tensor:
        return torch.exp(self.log_q_dec[self.check(q)])[None, :, None, None]


def analysis(latent: torch.Tensor, model, q: int,
             return_prescale: bool = False):
    """Latent (h, w, N) -> code (h, w, N) scaled for rate index q."""
    if not torch.isfinite(latent).all():
        raise ValueError("latent contains NaN or Inf")
    with torch.no_grad():
        pre = model.analysis(latent.permute(2, 0, 1)[None].float())
        code = pre * model.rate_scaler.enc_scale(q)
    code = code[0].permute(1, 2, 0)
    if return_prescale:
        return code, pre[0].permute(1, 2, 0)
    return code


def synthesis(code: torch.Tensor, model, q: int) -> torch.Tensor:
    """Code (h, w, N) -> latent (h, w, N), descaling by q_dec[q] first."""
    if not torch.isfinite(code).all():
        raise ValueError("code contains NaN or Inf")
    with torch.no_grad():
        x = code.permute(2, 0, 1)[None].float() * model.rate_scaler.dec_scale(q)
        lat = model.synthesis(x)
    return lat[0].permute(1, 2, 0)


def quantize(code: torch.Tensor, mode: str = "round") -> torch.Tensor:
    """Scalar quantization: nearest integer (ties to even) or uniform noise."""
    if mode == "round":
        return torch.round(code)
    if mode == "noise":
        return code + (torch.rand_like(code) - 0.5)
    raise ValueError(f"unknown quantization mode {mode!r}")
