"""Probability modeling for the quantized code.

The hyper branch vector-quantizes a downsampled summary of the code against a
hyper codebook and transmits the indices with fixed-length codes; a four-step
quadtree schedule then predicts per-element Gaussian (mean, scale) for each
spatial group conditioned on the hyper prior and previously decoded groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import ndtr

from .config import ModelConfig
from .rangecoder import PROB_FLOOR

# spatial group patterns, coded in this order
QUADTREE_PATTERNS = ((0, 0), (1, 1), (0, 1), (1, 0))
NUM_STEPS = 4


@dataclass
class QuadtreePlan:
    h: int
    w: int
    groups: list  # four (P_k, 2) int64 arrays of (row, col), raster order inside a group

    def group_mask(self, step: int) -> torch.Tensor:
        m = torch.zeros(self.h, self.w, dtype=torch.bool)
        g = self.groups[step]
        m[g[:, 0], g[:, 1]] = True
        return m

    def prefix_mask(self, step: int) -> torch.Tensor:
        m = torch.zeros(self.h, self.w, dtype=torch.bool)
        for k in range(step):
            g = self.groups[k]
            m[g[:, 0], g[:, 1]] = True
        return m


def build_quadtree_plan(h: int, w: int) -> QuadtreePlan:
    """Partition the h x w grid into the four mod-2 groups, coding order fixed."""
    if h < 1 or w < 1:
        raise ValueError(f"grid must be at least 1x1, got {h}x{w}")
    groups = []
    for pi, pj in QUADTREE_PATTERNS:
        rows = np.arange(pi, h, 2, dtype=np.int64)
        cols = np.arange(pj, w, 2, dtype=np.int64)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        groups.append(np.stack([rr.ravel(), cc.ravel()], axis=1))
    return QuadtreePlan(h=h, w=w, groups=groups)


@dataclass
class EntropyParameters:
    mean: torch.Tensor
    scale: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.scale.shape:
            raise ValueError("mean/scale shape mismatch")


class HyperAnalysis(nn.Module):
    """Code summary at half spatial resolution."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = cfg.latent_channels
        hidden = cfg.context_hidden
        self.net = nn.Sequential(
            nn.Conv2d(n, hidden, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(hidden, cfg.hyper_channels, 3, stride=2, padding=1),
        )

    def forward(self, code):
        return self.net(code)


class HyperSynthesis(nn.Module):
    """Quantized hyper code -> context prior at the code's resolution.

    The only spatial operator is one stride-2 transposed conv (kernel 4), so a
    hyper cell influences at most a 4x4 output block; the pointwise tail keeps
    that footprint.
    """

    KERNEL, STRIDE, PAD = 4, 2, 1

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ctx = cfg.context_channels
        self.up = nn.ConvTranspose2d(cfg.hyper_channels, ctx, self.KERNEL,
                                     stride=self.STRIDE, padding=self.PAD)
        self.tail = nn.Sequential(nn.GELU(), nn.Conv2d(ctx, ctx, 1),
                                  nn.GELU(), nn.Conv2d(ctx, ctx, 1))

    def forward(self, zq, out_hw=None):
        prior = self.tail(self.up(zq))
        if out_hw is not None:
            prior = prior[:, :, : out_hw[0], : out_hw[1]]
        return prior


class QuadtreeContext(nn.Module):
    """One conv head per quadtree step, mapping (prior, masked code) to (mean, scale)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = cfg.latent_channels
        hidden = cfg.context_hidden
        self.scale_min = cfg.scale_min
        self.steps = nn.ModuleList([
            nn.Sequential(
                nn.Conv2d(cfg.context_channels + n, hidden, 3, padding=1),
                nn.GELU(),
                nn.Conv2d(hidden, hidden, 3, padding=1),
                nn.GELU(),
                nn.Conv2d(hidden, 2 * n, 1),
            )
            for _ in range(NUM_STEPS)
        ])

    def forward(self, prior, masked_code, step: int):
        """Full-grid (mean, scale) maps for one step, NCHW in and out."""
        if not 0 <= step < NUM_STEPS:
            raise ValueError(f"step {step} outside [0, {NUM_STEPS})")
        out = self.steps[step](torch.cat([prior, masked_code], dim=1))
        mean, raw_scale = out.chunk(2, dim=1)
        scale = self.scale_min + F.softplus(raw_scale)
        return mean, scale


def hyper_analysis(code: torch.Tensor, model) -> torch.Tensor:
    """Code (h, w, N) -> hyper latent (ceil(h/2), ceil(w/2), N_h)."""
    if not torch.isfinite(code).all():
        raise ValueError("code contains NaN or Inf")
    with torch.no_grad():
        z = model.hyper_analysis(code.permute(2, 0, 1)[None].float())
    return z[0].permute(1, 2, 0)


def hyper_quantize(z: torch.Tensor, codebook: torch.Tensor):
    """Nearest-lookup quantization of the hyper latent, same semantics as vq_nearest."""
    from .autoencoder import vq_nearest

    return vq_nearest(z, codebook)


def hyper_synthesis(zq: torch.Tensor, model, out_hw: tuple[int, int]) -> torch.Tensor:
    """Quantized hyper latent (hz, wz, N_h) -> prior (h, w, C_ctx)."""
    hz, wz, _ = zq.shape
    if out_hw[0] > 2 * hz or out_hw[1] > 2 * wz:
        raise ValueError(f"prior {out_hw} not reachable from hyper grid {hz}x{wz}")
    with torch.no_grad():
        prior = model.hyper_synthesis(zq.permute(2, 0, 1)[None].float(), out_hw)
    return prior[0].permute(1, 2, 0)


def predict_params(model, prior: torch.Tensor, decoded_partial: torch.Tensor,
                   plan: QuadtreePlan, step: int) -> EntropyParameters:
    """Gaussian parameters for every position in the step's group.

    decoded_partial holds real values on groups before `step` and zeros
    elsewhere; positions in groups >= step are masked off here regardless, so
    the output provably depends only on the prior and earlier groups. Outputs
    are gathered in the group's raster order, shape (P_step, N).
    """
    if not 0 <= step < NUM_STEPS:
        raise ValueError(f"step {step} outside [0, {NUM_STEPS})")
    masked = decoded_partial * plan.prefix_mask(step)[:, :, None].to(decoded_partial.dtype)
    with torch.no_grad():
        mean, scale = model.context(
            prior.permute(2, 0, 1)[None].float(),
            masked.permute(2, 0, 1)[None].float(),
            step,
        )
    g = plan.groups[step]
    rows = torch.from_numpy(g[:, 0])
    cols = torch.from_numpy(g[:, 1])
    return EntropyParameters(
        mean=mean[0].permute(1, 2, 0)[rows, cols],
        scale=scale[0].permute(1, 2, 0)[rows, cols],
    )


def symbol_pmf(mean, scale, support: tuple[int, int]) -> np.ndarray:
    """Per-symbol probabilities over an integer support.

    Gaussian CDF differences over unit bins, floored at 2**-16 (floored entries
    are pinned and the rest renormalized so the floor survives), summing to 1.
    Returns shape mean.shape + (support size,), float64.
    """
    lo, hi = support
    if lo >= hi:
        raise ValueError(f"degenerate support [{lo}, {hi}]")
    size = hi - lo + 1
    if size * PROB_FLOOR > 1.0:
        raise ValueError(f"support of {size} symbols cannot honor the probability floor")
    mean = np.asarray(torch.as_tensor(mean).detach().double().numpy())
    scale = np.asarray(torch.as_tensor(scale).detach().double().numpy())
    ks = np.arange(lo, hi + 1, dtype=np.float64)
    upper = ndtr((ks + 0.5 - mean[..., None]) / scale[..., None])
    lower = ndtr((ks - 0.5 - mean[..., None]) / scale[..., None])
    p = np.clip(upper - lower, 0.0, None)

    flat = p.reshape(-1, size)
    total = flat.sum(axis=1, keepdims=True)
    np.divide(flat, total, out=flat, where=total > 0)
    flat[total[:, 0] == 0] = 1.0 / size
    # pin floored entries at exactly the floor, rescale the rest; repeat while
    # rescaling pushes new entries under
    pinned = np.zeros_like(flat, dtype=bool)
    for _ in range(size):
        low = (flat < PROB_FLOOR) & ~pinned
        if not low.any():
            break
        pinned |= low
        n_pin = pinned.sum(axis=1, keepdims=True)
        free_mass = np.where(~pinned, flat, 0.0).sum(axis=1, keepdims=True)
        target = 1.0 - n_pin * PROB_FLOOR
        scale_row = np.where(free_mass > 0, target / np.maximum(free_mass, 1e-300), 1.0)
        flat = np.where(pinned, PROB_FLOOR, flat * scale_row)
    return flat.reshape(p.shape)


def estimate_rate(y_hat: torch.Tensor, params: EntropyParameters,
                  support: tuple[int, int], num_hyper_indices: int,
                  hyper_codebook_size: int) -> dict:
    """Bit cost of a quantized code under the model.

    y_hat must be integer-valued and aligned element-for-element with
    params.mean/scale. Symbols outside the support widen it automatically.
    Returns {"y_bits", "hyper_bits", "total_bits", "support"}.
    """
    y = torch.as_tensor(y_hat).detach()
    if not torch.equal(y, torch.round(y)):
        raise ValueError("estimate_rate expects an integer-valued code")
    yi = y.long().numpy()
    lo, hi = support
    if yi.size:
        lo = min(lo, int(yi.min()))
        hi = max(hi, int(yi.max()))
    pmf = symbol_pmf(params.mean, params.scale, (lo, hi))
    flat_p = pmf.reshape(-1, hi - lo + 1)
    sym = (yi - lo).reshape(-1)
    picked = flat_p[np.arange(sym.size), sym]
    y_bits = float(-np.log2(picked).sum())
    hyper_bits = float(num_hyper_indices * math.ceil(math.log2(hyper_codebook_size)))
    return {
        "y_bits": y_bits,
        "hyper_bits": hyper_bits,
        "total_bits": y_bits + hyper_bits,
        "support": (lo, hi),
    }


def noisy_rate_bits(code_noisy: torch.Tensor, mean: torch.Tensor,
                    scale: torch.Tensor) -> torch.Tensor:
    """Differentiable bit cost for training: CDF differences at the noisy code."""
    upper = torch.special.ndtr((code_noisy + 0.5 - mean) / scale)
    lower = torch.special.ndtr((code_noisy - 0.5 - mean) / scale)
    likelihood = torch.clamp(upper - lower, min=PROB_FLOOR)
    return -torch.log2(likelihood).sum()
