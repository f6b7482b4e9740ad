"""Latent-space applications on a frozen codec: restoration encoding and
stylization decoding.

Both leave the codec untouched and keep the stream format unchanged: the
restoration encoder swaps in on the encode side only, and the stylization
decoder consumes the same compressed latent as the stock decoder.
"""

from __future__ import annotations

import copy

import numpy as np
import torch
import torch.nn.functional as F

from .autoencoder import Decoder, Encoder
from .codec import GLCModel, encode_image
from .config import ModelConfig
from .losses import RandomFeatureExtractor, perceptual_loss


def gaussian_noise(rng: np.random.Generator, image: np.ndarray,
                   sigma: float = 20.0 / 255.0) -> np.ndarray:
    """Default degradation: additive Gaussian noise, clipped to [0, 1]."""
    return np.clip(image + rng.normal(0.0, sigma, image.shape), 0.0, 1.0).astype(
        np.float32)


def make_noisy_pairs(images: np.ndarray, seed: int = 0, degradation=None):
    """(clean,) -> (distorted, clean) pairs with a declared degradation."""
    rng = np.random.default_rng(seed)
    degradation = degradation or gaussian_noise
    distorted = np.stack([degradation(rng, img) for img in images])
    return distorted, images


def _codec_weight_snapshot(model: GLCModel):
    return {k: v.clone() for k, v in model.state_dict().items()}


def _assert_codec_untouched(model: GLCModel, snapshot):
    for k, v in model.state_dict().items():
        if not torch.equal(v, snapshot[k]):
            raise RuntimeError(f"application training mutated codec weights: {k}")


def train_restoration_encoder(distorted: np.ndarray, clean: np.ndarray,
                              model: GLCModel, steps: int = 200,
                              batch_size: int = 8, lr: float = 1e-4,
                              seed: int = 0, pixel_finetune_steps: int = 0) -> Encoder:
    """Train an encoder that maps distorted images onto the clean latents the
    frozen codec expects; architecture identical to the codec's encoder.

    The loss is latent-space regression against E(clean). With
    pixel_finetune_steps > 0, a second phase backpropagates pixel MSE through
    the whole frozen codec path (straight-through rounding), sharpening the
    end-to-end restoration without touching codec weights.
    """
    if len(distorted) != len(clean):
        raise ValueError("distorted/clean datasets must be paired 1:1")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    snapshot = _codec_weight_snapshot(model)
    model.eval()

    restorer = copy.deepcopy(model.encoder)
    for p in restorer.parameters():
        p.requires_grad_(True)
    restorer.train()
    opt = torch.optim.AdamW(restorer.parameters(), lr=lr)

    for _ in range(steps):
        idx = rng.integers(0, len(clean), size=batch_size)
        x_d = torch.from_numpy(distorted[idx]).float().permute(0, 3, 1, 2)
        x_c = torch.from_numpy(clean[idx]).float().permute(0, 3, 1, 2)
        with torch.no_grad():
            target = model.encoder(x_c)
        opt.zero_grad()
        loss = F.mse_loss(restorer(x_d), target)
        loss.backward()
        opt.step()

    for step in range(pixel_finetune_steps):
        idx = rng.integers(0, len(clean), size=batch_size)
        x_d = torch.from_numpy(distorted[idx]).float().permute(0, 3, 1, 2)
        x_c = torch.from_numpy(clean[idx]).float().permute(0, 3, 1, 2)
        q = int(rng.integers(0, model.config.num_rate_levels))
        opt.zero_grad()
        lat = restorer(x_d)
        y = model.analysis(lat) * model.rate_scaler.enc_scale(q)
        y_hat = y + (torch.round(y) - y).detach()
        lat_hat = model.synthesis(y_hat * model.rate_scaler.dec_scale(q))
        x_hat = model.decoder(lat_hat)
        loss = F.mse_loss(x_hat, x_c)
        loss.backward()
        opt.step()

    restorer.eval()
    _assert_codec_untouched(model, snapshot)
    return restorer


def encode_restorative(model: GLCModel, restorer: Encoder, image, q: int,
                       coder=None, return_debug: bool = False):
    """Compress a distorted image through the restoration encoder.

    The output is a standard stream: the stock decoder reads it with no flag.
    """
    return encode_image(model, torch.as_tensor(np.asarray(image), dtype=torch.float32),
                        q=q, coder=coder, encoder_override=restorer,
                        return_debug=return_debug)


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, C, C) channel covariance, normalized by C*H*W."""
    b, c, h, w = features.shape
    flat = features.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def style_loss(extractor, image: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
    """Gram-matrix MSE across feature levels."""
    total = 0.0
    for fa, fs in zip(extractor.features(image), extractor.features(style)):
        total = total + F.mse_loss(gram_matrix(fa), gram_matrix(fs))
    return total


def train_style_decoder(style_image: np.ndarray, content_images: np.ndarray,
                        model: GLCModel, steps: int = 200, batch_size: int = 4,
                        lr: float = 1e-4, style_weight: float = 1.0,
                        seed: int = 0, extractor=None) -> Decoder:
    """Train a replacement decoder that renders the compressed latent in the
    style image's statistics while following the stock decoder's content."""
    if style_image is None:
        raise ValueError("a style image is required")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    snapshot = _codec_weight_snapshot(model)
    model.eval()
    extractor = extractor or RandomFeatureExtractor()

    style_decoder = Decoder(model.config)
    style_decoder.train()
    opt = torch.optim.AdamW(style_decoder.parameters(), lr=lr)
    style = torch.from_numpy(np.asarray(style_image, dtype=np.float32))
    style = style.permute(2, 0, 1)[None]

    q = model.config.num_rate_levels - 1
    for _ in range(steps):
        idx = rng.integers(0, len(content_images), size=batch_size)
        x = torch.from_numpy(content_images[idx]).float().permute(0, 3, 1, 2)
        with torch.no_grad():
            lat = model.encoder(x)
            y = torch.round(model.analysis(lat) * model.rate_scaler.enc_scale(q))
            lat_hat = model.synthesis(y * model.rate_scaler.dec_scale(q))
            content_target = model.decoder(lat_hat)
        opt.zero_grad()
        out = style_decoder(lat_hat)
        content = perceptual_loss(extractor, content_target, out)
        loss = content + style_weight * style_loss(extractor, out,
                                                   style.expand(out.shape[0], -1, -1, -1))
        loss.backward()
        opt.step()

    style_decoder.eval()
    _assert_codec_untouched(model, snapshot)
    return style_decoder


# ---------------------------------------------------------------------------
# application checkpoints

APP_FORMATS = {"restoration": "glc-restoration-encoder", "style": "glc-style-decoder"}


def save_app_checkpoint(path, module, kind: str, config: ModelConfig) -> None:
    if kind not in APP_FORMATS:
        raise ValueError(f"unknown application kind {kind!r}")
    torch.save({"format": APP_FORMATS[kind], "config": config.to_dict(),
                "weights": module.state_dict()}, path)


def load_app_checkpoint(path, kind: str):
    data = torch.load(path, map_location="cpu", weights_only=False)
    if data.get("format") != APP_FORMATS[kind]:
        raise ValueError(f"{path} is not a {kind} checkpoint")
    config = ModelConfig.from_dict(data["config"])
    module = Encoder(config) if kind == "restoration" else Decoder(config)
    module.load_state_dict(data["weights"])
    module.eval()
    return module
