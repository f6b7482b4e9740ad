"""Model configuration and presets.

A single ModelConfig describes every architecture choice needed to rebuild
the codec from a checkpoint: spatial downsampling factor, latent width,
codebook sizes, hyper module geometry and the rate ladder.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import yaml


@dataclass
class ModelConfig:
    # latent auto-encoder
    down_factor: int = 16          # image pixels per latent cell (1/f)
    latent_channels: int = 256     # N, channel count of the latent grid
    base_channels: int = 128       # width of the first conv stage
    channel_mult: tuple = (1, 1, 2, 2)  # per downsampling stage, len == log2(down_factor)
    num_res_blocks: int = 2
    codebook_size: int = 16384     # M
    patch_size: int = 32           # latent patch attention window
    attn_heads: int = 1

    # transform coding
    transform_hidden_mult: int = 2
    num_rate_levels: int = 4       # Q, discrete rate indices
    lambda_ladder: tuple = (0.1, 0.4, 1.6, 6.4)  # paired 1:1 with rate indices

    # entropy model
    hyper_channels: int = 64       # N_h
    hyper_codebook_size: int = 0   # M_h; 0 means "same as codebook_size"
    context_hidden: int = 64
    scale_min: float = 0.04
    support_lo: int = -64          # default coding support, widened per stream if needed
    support_hi: int = 63

    # training-side network widths
    disc_channels: int = 64
    code_predictor_dim: int = 64

    def __post_init__(self):
        if self.down_factor < 1 or self.down_factor & (self.down_factor - 1):
            raise ValueError(f"down_factor must be a power of two, got {self.down_factor}")
        if len(self.channel_mult) != self.num_down_stages:
            raise ValueError(
                f"channel_mult needs {self.num_down_stages} entries for down_factor="
                f"{self.down_factor}, got {len(self.channel_mult)}"
            )
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be >= 2")
        self.channel_mult = tuple(self.channel_mult)
        self.lambda_ladder = tuple(self.lambda_ladder)
        if len(self.lambda_ladder) != self.num_rate_levels:
            raise ValueError("lambda_ladder must have one entry per rate level")

    @property
    def num_down_stages(self) -> int:
        return self.down_factor.bit_length() - 1

    @property
    def effective_hyper_codebook_size(self) -> int:
        return self.hyper_codebook_size or self.codebook_size

    @property
    def context_channels(self) -> int:
        # hyper prior feature width, twice the latent width
        return 2 * self.latent_channels

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def natural_config(**overrides) -> ModelConfig:
    """Full-scale configuration for natural images (1/16 latent, M=16384)."""
    cfg = dict(
        down_factor=16, latent_channels=256, base_channels=128,
        channel_mult=(1, 1, 2, 2), codebook_size=16384, patch_size=32,
        hyper_channels=64,
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


def facial_config(**overrides) -> ModelConfig:
    """Facial-image variant: deeper downsampling (1/32) and a 1024-entry codebook."""
    cfg = dict(
        down_factor=32, latent_channels=256, base_channels=64,
        channel_mult=(1, 1, 2, 2, 4), codebook_size=1024, patch_size=32,
        hyper_channels=64,
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


def toy_config(**overrides) -> ModelConfig:
    """Small configuration so the full pipeline trains in minutes on CPU.

    The lambda ladder sits higher than the full-scale default because toy
    latents carry far less energy per element.
    """
    cfg = dict(
        down_factor=4, latent_channels=8, base_channels=24,
        channel_mult=(1, 2), num_res_blocks=1, codebook_size=64, patch_size=8,
        hyper_channels=8, hyper_codebook_size=16, context_hidden=48,
        transform_hidden_mult=4, disc_channels=24, code_predictor_dim=24,
        lambda_ladder=(0.25, 0.6, 1.3, 8.0),
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


PRESETS = {
    "toy": toy_config,
    "natural": natural_config,
    "facial": facial_config,
}


def load_config(path: str) -> ModelConfig:
    """Load a config from a YAML key/value file.

    The file may set `preset: <name>` and then override individual fields.
    """
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    preset = data.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}, have {sorted(PRESETS)}")
        return PRESETS[preset](**data)
    return ModelConfig.from_dict(data)


def save_config(cfg: ModelConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
