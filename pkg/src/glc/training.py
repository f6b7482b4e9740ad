"""Three-stage progressive training.

Stage I trains the generative auto-encoder (with codebook and discriminator).
Stage II freezes it and trains transform coding, the entropy model, the hyper
codebook and the code predictor under a rate-distortion objective. Stage III
fine-tunes everything jointly except the stage-I encoder copy and codebook
used for code supervision. Each batch draws one rate index and its paired
lambda from the ladder.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np
import torch

from .codec import GLCModel, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .losses import (
    CodePredictor,
    PatchDiscriminator,
    RandomFeatureExtractor,
    code_prediction_loss,
    discriminator_loss,
    stage1_loss,
    stage2_loss,
    stage3_loss,
)

STAGES = ("I", "II", "III")


class StageOrderError(RuntimeError):
    """Raised when a stage is started without its prerequisite checkpoint."""


@dataclass
class StageConfig:
    stage: str
    steps: int = 300
    batch_size: int = 8
    lr: float | None = None  # defaults: 1e-4 for stages I/II, 1e-5 for III
    disc_lr: float = 1e-4
    seed: int = 0
    log_every: int = 1  # a metrics row per training step
    # fraction of stage-II steps (from the end) trained with straight-through
    # rounding instead of noise, aligning the model with the actual coder
    round_tail: float = 0.3
    # stage II ablations: "categorical" (default) or "factorized" hyper prior,
    # and code-prediction supervision on/off
    hyper_prior: str = "categorical"
    code_prediction: bool = True

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.lr is None:
            self.lr = 1e-5 if self.stage == "III" else 1e-4


def sample_rate_index(rng: np.random.Generator, num_levels: int) -> int:
    """Uniform draw over the rate ladder; one lambda per index."""
    return int(rng.integers(0, num_levels))


class FactorizedHyperPrior(torch.nn.Module):
    """Per-channel Gaussian density for the ablation that replaces the
    categorical hyper codebook with a factorized prior on the hyper code."""

    def __init__(self, channels: int):
        super().__init__()
        self.mean = torch.nn.Parameter(torch.zeros(channels))
        self.log_scale = torch.nn.Parameter(torch.zeros(channels))

    def bits(self, z_noisy: torch.Tensor) -> torch.Tensor:
        from .entropy_model import noisy_rate_bits

        mean = self.mean[None, :, None, None].expand_as(z_noisy)
        scale = torch.exp(self.log_scale)[None, :, None, None].expand_as(z_noisy)
        return noisy_rate_bits(z_noisy, mean, scale)


def stage2_loss_factorized(model, code_predictor, factorized: FactorizedHyperPrior,
                           x: torch.Tensor, lam: float, q: int):
    """Stage-II objective with the factorized hyper prior ablation: the hyper
    code is scalar-quantized and its rate estimated by the learned density."""
    from .entropy_model import NUM_STEPS, build_quadtree_plan, noisy_rate_bits
    from .losses import ALPHA_CODE_PRED, LossReport

    with torch.no_grad():
        latent = model.encoder(x)
    pre = model.analysis(latent)
    y = pre * model.rate_scaler.enc_scale(q)
    y_noisy = y + (torch.rand_like(y) - 0.5)
    dec_scale = model.rate_scaler.dec_scale(q)
    y_noisy_descaled = y_noisy * dec_scale

    z = model.hyper_analysis(pre)
    z_noisy = z + (torch.rand_like(z) - 0.5)
    z_st = z + (torch.round(z) - z).detach()
    hyper_bits = factorized.bits(z_noisy)
    prior = model.hyper_synthesis(z_st, (y.shape[2], y.shape[3]))

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
    pixels = x.shape[0] * x.shape[2] * x.shape[3]
    rate_bpp = (rate_bits + hyper_bits) / pixels
    latent_hat = model.synthesis(y_noisy_descaled)
    if code_predictor is not None:
        _, ce, mse = code_prediction_loss(latent, latent_hat,
                                          model.codebook.codebook.detach(), code_predictor)
    else:
        ce = torch.zeros(())
        mse = torch.nn.functional.mse_loss(latent_hat, latent)
    d_code = ALPHA_CODE_PRED * ce + mse
    total = rate_bpp + lam * d_code
    return LossReport(
        stage="II", total=total, lambda_value=lam,
        parts={"rate_bits_per_pixel": rate_bpp, "code_ce": ce, "latent_mse": mse,
               "codebook": torch.zeros(())},
    )


def _batches(dataset: np.ndarray, batch_size: int, steps: int, rng: np.random.Generator):
    n = len(dataset)
    for _ in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        batch = torch.from_numpy(dataset[idx]).float().permute(0, 3, 1, 2)
        yield batch


class MetricsLog:
    """JSON-lines metrics sink; rows carry step, stage, lambda and loss parts."""

    def __init__(self, path=None):
        self.path = path
        self.rows = []

    def append(self, row: dict):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(row) + "\n")


def _log_row(log, step, stage, lam, q, report):
    log.append({
        "step": step, "stage": stage, "lambda": lam, "q": q,
        "total": report.total_value,
        **{k: report.part(k) for k in report.parts},
    })


def train_stage(stage_cfg: StageConfig, dataset: np.ndarray,
                checkpoint_in=None, checkpoint_out=None,
                model_config: ModelConfig | None = None,
                log_path=None):
    """Run one training stage and return (model, extras, log).

    Stage I starts from model_config (or a prior stage-I checkpoint to resume);
    stages II and III require the previous stage's checkpoint and carry its
    auxiliary networks forward. If checkpoint_out is given the result is saved
    there with stage provenance.
    """
    torch.manual_seed(stage_cfg.seed)
    rng = np.random.default_rng(stage_cfg.seed)
    log = MetricsLog(log_path)

    if stage_cfg.stage == "I":
        model, extras = _init_stage1(checkpoint_in, model_config)
        _run_stage1(stage_cfg, model, extras, dataset, rng, log)
    elif stage_cfg.stage == "II":
        model, extras = _init_stage2(checkpoint_in)
        _run_stage2(stage_cfg, model, extras, dataset, rng, log)
    else:
        model, extras = _init_stage3(checkpoint_in)
        _run_stage3(stage_cfg, model, extras, dataset, rng, log)

    if checkpoint_out is not None:
        save_checkpoint(checkpoint_out, model, stage=stage_cfg.stage,
                        extras={k: v for k, v in extras.items() if v is not None},
                        metadata={"steps": stage_cfg.steps, "seed": stage_cfg.seed,
                                  "hyper_prior": stage_cfg.hyper_prior,
                                  "code_prediction": stage_cfg.code_prediction})
    return model, extras, log


def _load_prereq(checkpoint_in, wanted: tuple[str, ...], stage: str):
    if checkpoint_in is None:
        raise StageOrderError(
            f"stage {stage} requires a checkpoint from stage {wanted}, none given")
    model, ckpt = load_checkpoint(checkpoint_in)
    if ckpt["stage"] not in wanted:
        raise StageOrderError(
            f"stage {stage} requires a stage-{wanted} checkpoint, "
            f"got stage {ckpt['stage']!r}")
    return model, ckpt


def _restore_extra(ckpt, name, module):
    state = ckpt.get("extras", {}).get(name)
    if state is not None:
        module.load_state_dict(state)
    return module


def _init_stage1(checkpoint_in, model_config):
    if checkpoint_in is not None:
        model, ckpt = _load_prereq(checkpoint_in, ("I",), "I")
        disc = _restore_extra(ckpt, "discriminator",
                              PatchDiscriminator(model.config.disc_channels))
    else:
        if model_config is None:
            raise ValueError("stage I needs a model_config (or a stage-I checkpoint)")
        model = GLCModel(model_config)
        disc = PatchDiscriminator(model_config.disc_channels)
    extras = {"discriminator": disc,
              "perceptual": RandomFeatureExtractor(),
              "code_predictor": None}
    return model, extras


def _init_stage2(checkpoint_in):
    model, ckpt = _load_prereq(checkpoint_in, ("I", "II"), "II")
    cp = CodePredictor(model.config)
    if ckpt["stage"] == "II":
        _restore_extra(ckpt, "code_predictor", cp)
    disc = _restore_extra(ckpt, "discriminator",
                          PatchDiscriminator(model.config.disc_channels))
    extras = {"discriminator": disc, "code_predictor": cp,
              "perceptual": RandomFeatureExtractor()}
    return model, extras


def _init_stage3(checkpoint_in):
    model, ckpt = _load_prereq(checkpoint_in, ("II", "III"), "III")
    cp = CodePredictor(model.config)
    _restore_extra(ckpt, "code_predictor", cp)
    disc = _restore_extra(ckpt, "discriminator",
                          PatchDiscriminator(model.config.disc_channels))
    encoder_vq = copy.deepcopy(model.encoder)
    state = ckpt.get("extras", {}).get("encoder_vq")
    if state is not None:
        encoder_vq.load_state_dict(state)
    for p in encoder_vq.parameters():
        p.requires_grad_(False)
    encoder_vq.eval()
    extras = {"discriminator": disc, "code_predictor": cp,
              "encoder_vq": encoder_vq, "perceptual": RandomFeatureExtractor()}
    return model, extras


def _freeze(module, frozen=True):
    for p in module.parameters():
        p.requires_grad_(not frozen)


def _run_stage1(cfg, model, extras, dataset, rng, log):
    disc = extras["discriminator"]
    perceptual = extras["perceptual"]
    model.train()
    disc.train()
    gen_params = (list(model.encoder.parameters()) + list(model.decoder.parameters())
                  + list(model.codebook.parameters()))
    opt = torch.optim.AdamW(gen_params, lr=cfg.lr)
    opt_d = torch.optim.AdamW(disc.parameters(), lr=cfg.disc_lr)
    epoch = max(1, len(dataset) // cfg.batch_size)
    last_layer = model.decoder.head[-1].weight

    for step, x in enumerate(_batches(dataset, cfg.batch_size, cfg.steps, rng)):
        latent = model.encoder(x)
        l_st, l_raw, _ = model.codebook(latent)
        x_hat = model.decoder(l_st)

        opt_d.zero_grad()
        d_loss = discriminator_loss(disc, x, x_hat)
        d_loss.backward()
        opt_d.step()

        opt.zero_grad()
        report = stage1_loss(x, x_hat, latent, l_raw, disc,
                             perceptual=perceptual, last_layer=last_layer)
        report.total.backward()
        opt.step()

        if step % epoch == epoch - 1:
            with torch.no_grad():
                samples = latent.permute(0, 2, 3, 1).reshape(-1, latent.shape[1])
            model.codebook.reinit_dead_entries(samples)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            _log_row(log, step, "I", 0.0, -1, report)
    model.eval()


def _run_stage2(cfg, model, extras, dataset, rng, log):
    cp = extras["code_predictor"]
    model.train()
    _freeze(model.encoder)
    _freeze(model.decoder)
    _freeze(model.codebook)
    model.encoder.eval()
    model.decoder.eval()

    trainable = (list(model.analysis.parameters()) + list(model.synthesis.parameters())
                 + list(model.rate_scaler.parameters())
                 + list(model.hyper_analysis.parameters())
                 + list(model.hyper_synthesis.parameters())
                 + list(model.context.parameters()))
    factorized = None
    if cfg.hyper_prior == "factorized":
        factorized = FactorizedHyperPrior(model.config.hyper_channels)
        trainable += list(factorized.parameters())
        extras["factorized_prior"] = factorized
    else:
        trainable += list(model.hyper_codebook.parameters())
    if cfg.code_prediction:
        trainable += list(cp.parameters())

    opt = torch.optim.AdamW(trainable, lr=cfg.lr)
    ladder = model.config.lambda_ladder
    epoch = max(1, len(dataset) // cfg.batch_size)
    z_samples = None

    round_from = cfg.steps - int(cfg.steps * cfg.round_tail)
    for step, x in enumerate(_batches(dataset, cfg.batch_size, cfg.steps, rng)):
        q = sample_rate_index(rng, model.config.num_rate_levels)
        lam = ladder[q]
        quant = "round" if step >= round_from else "noise"
        opt.zero_grad()
        if factorized is not None:
            report = stage2_loss_factorized(
                model, cp if cfg.code_prediction else None, factorized, x, lam, q)
        elif cfg.code_prediction:
            report = stage2_loss(model, cp, x, lam, q, quant=quant)
        else:
            report = _stage2_loss_no_code_pred(model, x, lam, q, quant=quant)
        report.total.backward()
        opt.step()

        if factorized is None and step % epoch == epoch - 1:
            with torch.no_grad():
                z = model.hyper_analysis(model.analysis(model.encoder(x)))
                z_samples = z.permute(0, 2, 3, 1).reshape(-1, z.shape[1])
            model.hyper_codebook.reinit_dead_entries(z_samples)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            _log_row(log, step, "II", lam, q, report)
    model.eval()


def _stage2_loss_no_code_pred(model, x, lam, q, quant="noise"):
    """Code-prediction-off ablation: distortion is the latent MSE alone."""
    from .losses import LossReport, _transform_entropy_forward

    with torch.no_grad():
        latent = model.encoder(x)
    latent_hat, rate_bits, cb_hyper, hyper_bits = _transform_entropy_forward(
        model, latent, q, quant=quant)
    pixels = x.shape[0] * x.shape[2] * x.shape[3]
    rate_bpp = (rate_bits + hyper_bits) / pixels
    mse = torch.nn.functional.mse_loss(latent_hat, latent)
    total = rate_bpp + lam * mse + cb_hyper
    return LossReport(
        stage="II", total=total, lambda_value=lam,
        parts={"rate_bits_per_pixel": rate_bpp, "code_ce": torch.zeros(()),
               "latent_mse": mse, "codebook": cb_hyper},
    )


def _run_stage3(cfg, model, extras, dataset, rng, log):
    cp = extras["code_predictor"]
    disc = extras["discriminator"]
    encoder_vq = extras["encoder_vq"]
    perceptual = extras["perceptual"]
    model.train()
    disc.train()
    _freeze(model.codebook)  # code supervision keeps the stage-I code space

    trainable = [p for name, p in model.named_parameters()
                 if not name.startswith("codebook.")]
    trainable += list(cp.parameters())
    opt = torch.optim.AdamW(trainable, lr=cfg.lr)
    opt_d = torch.optim.AdamW(disc.parameters(), lr=cfg.disc_lr)
    ladder = model.config.lambda_ladder

    for step, x in enumerate(_batches(dataset, cfg.batch_size, cfg.steps, rng)):
        q = sample_rate_index(rng, model.config.num_rate_levels)
        lam = ladder[q]

        opt_d.zero_grad()
        with torch.no_grad():
            latent = model.encoder(x)
            pre = model.analysis(latent) * model.rate_scaler.enc_scale(q)
            latent_hat = model.synthesis(
                (pre + torch.rand_like(pre) - 0.5) * model.rate_scaler.dec_scale(q))
            x_fake = model.decoder(latent_hat)
        d_loss = discriminator_loss(disc, x, x_fake)
        d_loss.backward()
        opt_d.step()

        opt.zero_grad()
        report = stage3_loss(model, cp, encoder_vq, disc, x, lam, q,
                             perceptual=perceptual)
        report.total.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            _log_row(log, step, "III", lam, q, report)
    model.eval()


def run_pipeline(model_config: ModelConfig, dataset: np.ndarray, workdir,
                 stage_steps=(300, 500, 200), seed: int = 0,
                 batch_size: int = 8, stage_lrs=(4e-4, 1e-3, 1e-5),
                 log_path=None):
    """Convenience wrapper: stages I -> II -> III chained through checkpoints.

    Default learning rates are tuned for toy-scale runs. Returns the path of
    the final checkpoint.
    """
    import os

    paths = [os.path.join(str(workdir), f"stage{i + 1}.pt") for i in range(3)]
    train_stage(StageConfig(stage="I", steps=stage_steps[0], seed=seed,
                            batch_size=batch_size, lr=stage_lrs[0]),
                dataset, checkpoint_in=None, checkpoint_out=paths[0],
                model_config=model_config, log_path=log_path)
    train_stage(StageConfig(stage="II", steps=stage_steps[1], seed=seed + 1,
                            batch_size=batch_size, lr=stage_lrs[1]),
                dataset, checkpoint_in=paths[0], checkpoint_out=paths[1],
                log_path=log_path)
    train_stage(StageConfig(stage="III", steps=stage_steps[2], seed=seed + 2,
                            batch_size=batch_size, lr=stage_lrs[2]),
                dataset, checkpoint_in=paths[1], checkpoint_out=paths[2],
                log_path=log_path)
    return paths[2]
