"""Generative latent auto-encoder: conv encoder/decoder with a vector-quantized
bottleneck and windowed attention on the latent grid.

Images are (H, W, 3) floats in [0, 1]; latents are (h, w, N) with
h = H / down_factor. Network internals use NCHW batches.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig


class ShapeError(ValueError):
    pass


def _norm(channels: int) -> nn.GroupNorm:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return nn.GroupNorm(g, channels)
    return nn.GroupNorm(1, channels)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int | None = None):
        super().__init__()
        out_ch = out_ch or in_ch
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class PatchAttention(nn.Module):
    """Self-attention restricted to non-overlapping windows of the latent grid.

    Normalization is per position (LayerNorm over channels) and padded
    positions are masked out of the softmax, so inputs in one window can never
    influence outputs in another, and a window size at least as large as the
    grid reduces exactly to global attention.
    """

    def __init__(self, channels: int, patch_size: int, heads: int = 1):
        super().__init__()
        if patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {patch_size}")
        if channels % heads:
            raise ValueError("channels must divide evenly over heads")
        self.patch_size = patch_size
        self.heads = heads
        self.norm = nn.LayerNorm(channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def _partition(self, t, b, dim, nh, nw, p):
        # (b, dim*heads, nh*p, nw*p) -> (b*nh*nw, heads, p*p, dim)
        t = t.reshape(b, self.heads, dim, nh, p, nw, p)
        t = t.permute(0, 3, 5, 1, 4, 6, 2)
        return t.reshape(b * nh * nw, self.heads, p * p, dim)

    def forward(self, x):
        b, c, h, w = x.shape
        p = self.patch_size
        ph = (p - h % p) % p
        pw = (p - w % p) % p
        inp = F.pad(x, (0, pw, 0, ph)) if (ph or pw) else x
        hh, ww = inp.shape[2:]
        nh, nw = hh // p, ww // p

        normed = self.norm(inp.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        q, k, v = self.qkv(normed).chunk(3, dim=1)
        d = c // self.heads
        q = self._partition(q, b, d, nh, nw, p)
        k = self._partition(k, b, d, nh, nw, p)
        v = self._partition(v, b, d, nh, nw, p)

        logits = q @ k.transpose(-2, -1) / d ** 0.5
        if ph or pw:
            valid = torch.zeros(1, 1, hh, ww, device=x.device)
            valid[:, :, :h, :w] = 1.0
            key_ok = self._partition(valid, 1, 1, nh, nw, p)  # (nh*nw, 1, p*p, 1)
            key_ok = (key_ok.transpose(-2, -1) > 0.5).repeat(b, 1, 1, 1)
            logits = logits.masked_fill(~key_ok, float("-inf"))
        attn = torch.softmax(logits, dim=-1)
        out = attn @ v
        out = out.reshape(b, nh, nw, self.heads, p, p, d)
        out = out.permute(0, 3, 6, 1, 4, 2, 5).reshape(b, c, hh, ww)
        out = self.proj(out)
        if ph or pw:
            out = out[:, :, :h, :w]
        return x + out


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = [cfg.base_channels * m for m in cfg.channel_mult]
        self.stem = nn.Conv2d(3, chans[0], 3, padding=1)
        stages = []
        prev = chans[0]
        for ch in chans:
            blocks = [ResidualBlock(prev, ch)]
            blocks += [ResidualBlock(ch) for _ in range(cfg.num_res_blocks - 1)]
            blocks.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            stages.append(nn.Sequential(*blocks))
            prev = ch
        self.stages = nn.ModuleList(stages)
        self.mid = nn.Sequential(
            ResidualBlock(prev),
            PatchAttention(prev, cfg.patch_size, cfg.attn_heads),
            ResidualBlock(prev),
        )
        # tanh keeps the latent field inside the codebook's support and stops
        # its scale drifting during adversarial training
        self.head = nn.Sequential(_norm(prev), nn.SiLU(),
                                  nn.Conv2d(prev, cfg.latent_channels, 1), nn.Tanh())

    def forward(self, x):
        h = self.stem(x)
        for stage in self.stages:
            h = stage(h)
        return self.head(self.mid(h))


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = [cfg.base_channels * m for m in cfg.channel_mult]
        top = chans[-1]
        self.stem = nn.Conv2d(cfg.latent_channels, top, 1)
        self.mid = nn.Sequential(
            ResidualBlock(top),
            PatchAttention(top, cfg.patch_size, cfg.attn_heads),
            ResidualBlock(top),
        )
        stages = []
        prev = top
        for ch in reversed(chans):
            blocks = [nn.Upsample(scale_factor=2, mode="nearest"),
                      nn.Conv2d(prev, ch, 3, padding=1),
                      ResidualBlock(ch)]
            blocks += [ResidualBlock(ch) for _ in range(cfg.num_res_blocks - 1)]
            stages.append(nn.Sequential(*blocks))
            prev = ch
        self.stages = nn.ModuleList(stages)
        self.head = nn.Sequential(_norm(prev), nn.SiLU(), nn.Conv2d(prev, 3, 3, padding=1))

    def forward(self, z):
        h = self.mid(self.stem(z))
        for stage in self.stages:
            h = stage(h)
        return torch.sigmoid(self.head(h))


def nearest_code_indices(vectors: torch.Tensor, codebook: torch.Tensor,
                         chunk: int = 4096) -> torch.Tensor:
    """Index of the Euclidean-nearest codebook row for each vector, (P, N) -> (P,).

    Distances are accumulated in float64 so results agree with an exhaustive
    scan even for near-ties.
    """
    if codebook.numel() == 0 or codebook.shape[0] < 1:
        raise ValueError("empty codebook")
    if vectors.shape[-1] != codebook.shape[-1]:
        raise ShapeError(
            f"vector dim {vectors.shape[-1]} != codebook dim {codebook.shape[-1]}")
    v = vectors.detach().double()
    c = codebook.detach().double()
    v_sq = (v * v).sum(dim=1, keepdim=True)
    best_d = torch.full((v.shape[0],), float("inf"), dtype=torch.float64)
    best_i = torch.zeros(v.shape[0], dtype=torch.long)
    for start in range(0, c.shape[0], chunk):
        cc = c[start:start + chunk]
        d = v_sq - 2.0 * (v @ cc.t()) + (cc * cc).sum(dim=1)
        d_min, i_min = d.min(dim=1)
        better = d_min < best_d
        best_d = torch.where(better, d_min, best_d)
        best_i = torch.where(better, i_min + start, best_i)
    return best_i


class VectorQuantizer(nn.Module):
    """Learned codebook with nearest-entry lookup and straight-through gradients."""

    def __init__(self, num_entries: int, dim: int):
        super().__init__()
        if num_entries < 2:
            raise ValueError("codebook needs at least 2 entries")
        self.num_entries = num_entries
        self.dim = dim
        self.codebook = nn.Parameter(torch.empty(num_entries, dim).uniform_(-1.0, 1.0))
        self.register_buffer("usage", torch.zeros(num_entries, dtype=torch.long))

    def lookup(self, flat: torch.Tensor):
        idx = nearest_code_indices(flat, self.codebook)
        return self.codebook[idx], idx

    def forward(self, latent: torch.Tensor):
        """latent: (B, N, h, w) -> (quantized_st, quantized_raw, indices (B, h, w)).

        quantized_st carries straight-through gradients to the input;
        quantized_raw is the plain codebook selection used by the codebook loss.
        """
        b, n, h, w = latent.shape
        flat = latent.permute(0, 2, 3, 1).reshape(-1, n)
        raw, idx = self.lookup(flat)
        raw = raw.reshape(b, h, w, n).permute(0, 3, 1, 2).to(latent.dtype)
        if self.training:
            with torch.no_grad():
                self.usage += torch.bincount(idx, minlength=self.num_entries)
        st = latent + (raw - latent).detach()
        return st, raw, idx.reshape(b, h, w)

    @torch.no_grad()
    def reinit_dead_entries(self, samples: torch.Tensor, generator=None) -> int:
        """Replace entries unused since the last reset with random sample vectors."""
        dead = (self.usage == 0).nonzero(as_tuple=True)[0]
        if len(dead) and len(samples):
            pick = torch.randint(0, samples.shape[0], (len(dead),), generator=generator)
            self.codebook.data[dead] = samples[pick].to(self.codebook.dtype)
        self.usage.zero_()
        return int(len(dead))


def pad_image(image: torch.Tensor, multiple: int) -> torch.Tensor:
    """Reflect-pad (H, W, 3) on the bottom/right to a size multiple."""
    h, w, _ = image.shape
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if not (ph or pw):
        return image
    x = image.permute(2, 0, 1)[None]
    mode = "reflect" if (ph < h and pw < w) else "replicate"
    x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return x[0].permute(1, 2, 0)


def encode_latent(image: torch.Tensor, model, pad: bool = True) -> torch.Tensor:
    """Map an (H, W, 3) image in [0, 1] to its (h, w, N) latent grid."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {tuple(image.shape)}")
    f = model.config.down_factor
    if image.shape[0] % f or image.shape[1] % f:
        if not pad:
            raise ShapeError(
                f"image {tuple(image.shape[:2])} not divisible by {f} and padding disabled")
        image = pad_image(image, f)
    with torch.no_grad():
        model.encoder.eval()
        lat = model.encoder(image.permute(2, 0, 1)[None].float())
    return lat[0].permute(1, 2, 0)


def decode_latent(latent: torch.Tensor, model,
                  orig_size: tuple[int, int] | None = None) -> torch.Tensor:
    """Map an (h, w, N) latent back to an (H, W, 3) image in [0, 1].

    orig_size crops away padding introduced on encode.
    """
    if latent.ndim != 3 or latent.shape[2] != model.config.latent_channels:
        raise ShapeError(
            f"expected (h, w, {model.config.latent_channels}) latent, got {tuple(latent.shape)}")
    if not torch.isfinite(latent).all():
        raise ValueError("latent contains NaN or Inf")
    with torch.no_grad():
        model.decoder.eval()
        img = model.decoder(latent.permute(2, 0, 1)[None].float())
    img = img[0].permute(1, 2, 0).clamp(0.0, 1.0)
    if orig_size is not None:
        img = img[: orig_size[0], : orig_size[1]]
    return img


def vq_nearest(latent: torch.Tensor, codebook: torch.Tensor):
    """Quantize an (h, w, N) grid to its nearest codebook rows.

    Returns (quantized (h, w, N), indices (h, w)).
    """
    h, w, n = latent.shape
    flat = latent.reshape(-1, n)
    idx = nearest_code_indices(flat, codebook)
    quant = codebook[idx].reshape(h, w, n).to(latent.dtype)
    return quant, idx.reshape(h, w)
