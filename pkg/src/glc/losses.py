"""Training losses for all three stages, plus the auxiliary networks they need.

Stage I supervises the auto-encoder in pixel space (reconstruction, perceptual,
adversarial, codebook). Stage II supervises transform coding in latent space
with a rate term and code-prediction distortion, auto-encoder frozen. Stage III
fine-tunes everything with the code-prediction loss lifted to pixel space
through a frozen copy of the stage-I encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .autoencoder import _norm
from .config import ModelConfig
from .entropy_model import NUM_STEPS, build_quadtree_plan, noisy_rate_bits

BETA_CODEBOOK = 0.25      # codebook vs encoder update balance
ALPHA_CODE_PRED = 0.5     # cross-entropy weight inside the code-prediction loss
LAMBDA_ADV = 0.8          # adversarial weight
LAMBDA_CODE = 0.05        # stage-III pixel code-prediction weight

# global instrumentation: bumped on every code-predictor forward so tests can
# prove the inference path never evaluates it
_code_predictor_evals = 0


def code_predictor_eval_count() -> int:
    return _code_predictor_evals


def reset_code_predictor_eval_count() -> None:
    global _code_predictor_evals
    _code_predictor_evals = 0


@dataclass
class LossReport:
    """Loss decomposition for one step; total always equals the documented
    weighted sum of the parts for the active stage."""

    stage: str
    total: torch.Tensor
    parts: dict
    lambda_value: float = 1.0
    adv_weight: float = 1.0
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if not torch.isfinite(self.total):
            raise ValueError("non-finite total loss")
        for name, value in self.parts.items():
            if not math.isfinite(self.part(name)):
                raise ValueError(f"non-finite loss part {name}")

    def part(self, name: str) -> float:
        value = self.parts[name]
        if torch.is_tensor(value):
            return float(value.detach())
        return float(value)

    @property
    def total_value(self) -> float:
        return float(self.total.detach())

    def expected_total(self) -> float:
        """Recompute the total from the parts via the stage formula."""
        p = {k: self.part(k) for k in self.parts}
        if self.stage == "I":
            return (p["recon"] + p["perceptual"]
                    + LAMBDA_ADV * self.adv_weight * p["adversarial"]
                    + p["codebook"])
        if self.stage == "II":
            d_code = ALPHA_CODE_PRED * p["code_ce"] + p["latent_mse"]
            return p["rate_bits_per_pixel"] + self.lambda_value * d_code + p["codebook"]
        if self.stage == "III":
            dist = (p["recon"] + p["perceptual"]
                    + LAMBDA_ADV * self.adv_weight * p["adversarial"]
                    + LAMBDA_CODE * p["code_pixel"])
            return p["rate_bits_per_pixel"] + self.lambda_value * dist + p["codebook"]
        raise ValueError(f"unknown stage {self.stage}")


# ---------------------------------------------------------------------------
# auxiliary networks


class RandomFeatureExtractor(nn.Module):
    """Frozen randomly-initialized conv pyramid used as the default perceptual
    feature space at toy scale; heavier pretrained extractors plug in through
    the same features() interface."""

    def __init__(self, channels: int = 16, levels: int = 3, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        prev = 3
        for _ in range(levels):
            conv = nn.Conv2d(prev, channels, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.3)
                conv.bias.zero_()
            convs.append(conv)
            prev = channels
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.convs:
            h = torch.tanh(conv(h))
            feats.append(h)
        return feats

    forward = features


def perceptual_loss(extractor, x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    fx = extractor.features(x)
    fy = extractor.features(x_hat)
    return sum(F.mse_loss(a, b) for a, b in zip(fx, fy))


class PatchDiscriminator(nn.Module):
    """Small PatchGAN: conv stack mapping images to a grid of realism logits."""

    def __init__(self, channels: int = 64, layers: int = 3):
        super().__init__()
        seq = [nn.Conv2d(3, channels, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        prev = channels
        for i in range(1, layers):
            ch = min(prev * 2, channels * 4)
            seq += [nn.Conv2d(prev, ch, 4, stride=2, padding=1),
                    _norm(ch), nn.LeakyReLU(0.2)]
            prev = ch
        seq.append(nn.Conv2d(prev, 1, 3, padding=1))
        self.net = nn.Sequential(*seq)

    def forward(self, x):
        return self.net(x)


def discriminator_loss(disc: PatchDiscriminator, real: torch.Tensor,
                       fake: torch.Tensor) -> torch.Tensor:
    """Hinge loss for the discriminator itself."""
    return (F.relu(1.0 - disc(real)).mean() + F.relu(1.0 + disc(fake.detach())).mean())


def generator_adversarial(disc: PatchDiscriminator, fake: torch.Tensor) -> torch.Tensor:
    return -disc(fake).mean()


def adaptive_adv_weight(rec_loss: torch.Tensor, adv_loss: torch.Tensor,
                        last_layer: torch.Tensor) -> float:
    """Balance adversarial against reconstruction gradients at the decoder's
    last layer; returns a detached scalar."""
    rec_grad = torch.autograd.grad(rec_loss, last_layer, retain_graph=True)[0]
    adv_grad = torch.autograd.grad(adv_loss, last_layer, retain_graph=True)[0]
    w = rec_grad.norm() / (adv_grad.norm() + 1e-4)
    return float(w.clamp(0.0, 1e4).detach())


class CodePredictor(nn.Module):
    """Predicts per-position codebook indices from a (compressed) latent grid.

    Two global self-attention blocks over the latent tokens; training-time
    supervision only, never part of the codec pipeline.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n, dim = cfg.latent_channels, cfg.code_predictor_dim
        self.embed = nn.Conv2d(n, dim, 1)
        self.blocks = nn.ModuleList([
            nn.ModuleDict({
                "norm1": nn.LayerNorm(dim),
                "attn": nn.MultiheadAttention(dim, num_heads=1, batch_first=True),
                "norm2": nn.LayerNorm(dim),
                "mlp": nn.Sequential(nn.Linear(dim, dim * 2), nn.GELU(),
                                     nn.Linear(dim * 2, dim)),
            })
            for _ in range(2)
        ])
        self.head = nn.Linear(dim, cfg.codebook_size)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        """latent (B, N, h, w) -> logits (B, M, h, w)."""
        global _code_predictor_evals
        _code_predictor_evals += 1
        b, _, h, w = latent.shape
        t = self.embed(latent).flatten(2).transpose(1, 2)  # (B, h*w, dim)
        for blk in self.blocks:
            a = blk["norm1"](t)
            t = t + blk["attn"](a, a, a, need_weights=False)[0]
            t = t + blk["mlp"](blk["norm2"](t))
        logits = self.head(t)  # (B, h*w, M)
        return logits.transpose(1, 2).reshape(b, -1, h, w)


# ---------------------------------------------------------------------------
# losses


def codebook_loss(latent: torch.Tensor, quantized_raw: torch.Tensor,
                  beta: float = BETA_CODEBOOK) -> torch.Tensor:
    """Two-sided vector-quantization loss with stop-gradients.

    The first term moves only the codebook, the second (scaled by beta) only
    the encoder. Squared error on both sides: the gradient then scales with
    the gap, which the codebook needs to track a drifting latent scale.
    """
    if latent.shape != quantized_raw.shape:
        raise ValueError(f"shape mismatch {latent.shape} vs {quantized_raw.shape}")
    to_codebook = F.mse_loss(quantized_raw, latent.detach())
    to_encoder = F.mse_loss(latent, quantized_raw.detach())
    return to_codebook + beta * to_encoder


def code_prediction_loss(latent: torch.Tensor, latent_hat: torch.Tensor,
                         codebook: torch.Tensor, code_predictor: CodePredictor,
                         alpha: float = ALPHA_CODE_PRED):
    """Cross-entropy on predicted codebook indices plus latent MSE.

    latent/latent_hat are (B, N, h, w); the index targets come from the frozen
    codebook applied to the clean latent. Returns (total, ce, mse).
    """
    from .autoencoder import nearest_code_indices

    if codebook.shape[0] != code_predictor.head.out_features:
        raise ValueError("codebook size does not match predictor logit width")
    b, n, h, w = latent.shape
    with torch.no_grad():
        flat = latent.detach().permute(0, 2, 3, 1).reshape(-1, n)
        targets = nearest_code_indices(flat, codebook).reshape(b, h, w)
    logits = code_predictor(latent_hat)
    ce = F.cross_entropy(logits, targets)
    mse = F.mse_loss(latent_hat, latent)
    return alpha * ce + mse, ce, mse


def stage1_loss(x: torch.Tensor, x_hat: torch.Tensor, latent: torch.Tensor,
                quantized_raw: torch.Tensor, discriminator: PatchDiscriminator,
                perceptual=None, last_layer: torch.Tensor | None = None,
                adv_weight_override: float | None = None) -> LossReport:
    """Auto-encoder objective: recon + perceptual + weighted adversarial + codebook."""
    warnings = []
    recon = (x - x_hat).abs().mean()
    if perceptual is None:
        per = F.mse_loss(x, x_hat)
        warnings.append("no perceptual extractor; falling back to identity-feature MSE")
    else:
        per = perceptual_loss(perceptual, x, x_hat)
    adv = generator_adversarial(discriminator, x_hat)
    cb = codebook_loss(latent, quantized_raw)

    if adv_weight_override is not None:
        w = adv_weight_override
    elif last_layer is not None and x_hat.requires_grad:
        w = adaptive_adv_weight(recon + per, adv, last_layer)
    else:
        w = 1.0
    total = recon + per + LAMBDA_ADV * w * adv + cb
    return LossReport(
        stage="I", total=total, adv_weight=w, warnings=warnings,
        parts={"recon": recon, "perceptual": per, "adversarial": adv, "codebook": cb},
    )


def _transform_entropy_forward(model, latent: torch.Tensor, q: int,
                               noise: torch.Tensor | None = None,
                               quant: str = "noise"):
    """Shared stage II/III forward: latent (B, N, h, w) -> quantized code path.

    The hyper branch reads the pre-scale code and the context nets predict in
    the descaled domain, so both are shared across rate indices; predictions
    convert to coding units through the decode scales. quant selects uniform
    noise (the differentiable stand-in) or straight-through rounding, which
    matches what the coder does at inference.

    Returns (latent_hat, rate_bits, hyper_codebook_loss, hyper_bits).
    """
    pre = model.analysis(latent)
    y = pre * model.rate_scaler.enc_scale(q)
    if quant == "noise":
        if noise is None:
            noise = torch.rand_like(y) - 0.5
        y_noisy = y + noise
    elif quant == "round":
        y_noisy = y + (torch.round(y) - y).detach()
    else:
        raise ValueError(f"unknown quantization mode {quant!r}")
    dec_scale = model.rate_scaler.dec_scale(q)
    y_noisy_descaled = y_noisy * dec_scale

    z = model.hyper_analysis(pre)
    b, nz, hz, wz = z.shape
    flat_st, flat_raw, _ = model.hyper_codebook(z)
    cb_hyper = codebook_loss(z, flat_raw)
    prior = model.hyper_synthesis(flat_st, (y.shape[2], y.shape[3]))

    plan = build_quadtree_plan(y.shape[2], y.shape[3])
    mean_full = torch.zeros_like(y)
    scale_full = torch.ones_like(y)
    for step in range(NUM_STEPS):
        mask = plan.prefix_mask(step)[None, None].to(y.dtype)
        mean_k, scale_k = model.context(prior, y_noisy_descaled * mask, step)
        gmask = plan.group_mask(step)[None, None].to(y.dtype)
        mean_full = mean_full + (mean_k / dec_scale) * gmask
        scale_full = scale_full * (1.0 - gmask) + (scale_k / dec_scale) * gmask

    rate_bits = noisy_rate_bits(y_noisy, mean_full, scale_full)
    hyper_bits = float(b * hz * wz * math.ceil(math.log2(model.hyper_codebook.num_entries)))
    latent_hat = model.synthesis(y_noisy_descaled)
    return latent_hat, rate_bits, cb_hyper, hyper_bits


def stage2_loss(model, code_predictor: CodePredictor, x: torch.Tensor,
                lam: float, q: int, noise: torch.Tensor | None = None,
                quant: str = "noise") -> LossReport:
    """Transform-coding objective: rate + lambda * code distortion + hyper codebook.

    The auto-encoder is frozen; its latent is treated as data. Noise-mode
    quantization by default; a round-mode tail aligns training with the coder.
    """
    with torch.no_grad():
        latent = model.encoder(x)
    latent_hat, rate_bits, cb_hyper, hyper_bits = _transform_entropy_forward(
        model, latent, q, noise, quant=quant)
    pixels = x.shape[0] * x.shape[2] * x.shape[3]
    rate_bpp = (rate_bits + hyper_bits) / pixels
    _, ce, mse = code_prediction_loss(latent, latent_hat,
                                      model.codebook.codebook.detach(), code_predictor)
    d_code = ALPHA_CODE_PRED * ce + mse
    total = rate_bpp + lam * d_code + cb_hyper
    return LossReport(
        stage="II", total=total, lambda_value=lam,
        parts={"rate_bits_per_pixel": rate_bpp, "code_ce": ce, "latent_mse": mse,
               "codebook": cb_hyper},
    )


def stage3_loss(model, code_predictor: CodePredictor, encoder_vq,
                discriminator: PatchDiscriminator, x: torch.Tensor, lam: float,
                q: int, perceptual=None, noise: torch.Tensor | None = None,
                quant: str = "round",
                adv_weight_override: float | None = None) -> LossReport:
    """Joint objective: rate + lambda * pixel distortion, code prediction in
    pixel space through the frozen stage-I encoder. Fine-tuning defaults to
    round-mode quantization, matching the inference path it polishes."""
    warnings = []
    latent = model.encoder(x)
    latent_hat, rate_bits, cb_hyper, hyper_bits = _transform_entropy_forward(
        model, latent, q, noise, quant=quant)
    x_hat = model.decoder(latent_hat)
    pixels = x.shape[0] * x.shape[2] * x.shape[3]
    rate_bpp = (rate_bits + hyper_bits) / pixels

    recon = (x - x_hat).abs().mean()
    if perceptual is None:
        per = F.mse_loss(x, x_hat)
        warnings.append("no perceptual extractor; falling back to identity-feature MSE")
    else:
        per = perceptual_loss(perceptual, x, x_hat)
    adv = generator_adversarial(discriminator, x_hat)

    with torch.no_grad():
        latent_pix = encoder_vq(x)
    latent_pix_hat = encoder_vq(x_hat)
    code_pixel, ce, mse = code_prediction_loss(
        latent_pix, latent_pix_hat, model.codebook.codebook.detach(), code_predictor)

    if adv_weight_override is not None:
        w = adv_weight_override
    elif x_hat.requires_grad:
        w = adaptive_adv_weight(recon + per, adv,
                                model.decoder.head[-1].weight)
    else:
        w = 1.0
    dist = recon + per + LAMBDA_ADV * w * adv + LAMBDA_CODE * code_pixel
    total = rate_bpp + lam * dist + cb_hyper
    return LossReport(
        stage="III", total=total, lambda_value=lam, adv_weight=w, warnings=warnings,
        parts={"recon": recon, "perceptual": per, "adversarial": adv,
               "code_pixel": code_pixel, "code_ce": ce, "latent_mse": mse,
               "rate_bits_per_pixel": rate_bpp, "codebook": cb_hyper},
    )
