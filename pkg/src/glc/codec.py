"""Full codec pipeline: model container, file-level encode/decode, checkpoints.

Encoding maps an image through the latent encoder and analysis transform,
round-quantizes the code, transmits hyper indices fixed-length and the code
itself range-coded under the quadtree schedule. Decoding mirrors the schedule
exactly, so the quantized code is recovered bit-for-bit before the synthesis
transform and latent decoder run.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import zlib

import numpy as np
import torch
import torch.nn as nn

from . import transform as tc
from .autoencoder import Decoder, Encoder, VectorQuantizer, decode_latent, encode_latent
from .bitstream import Stream, StreamHeader, pack_bitstream, unpack_bitstream
from .config import ModelConfig
from .entropy_model import (
    HyperAnalysis,
    HyperSynthesis,
    NUM_STEPS,
    QuadtreeContext,
    build_quadtree_plan,
    hyper_analysis,
    hyper_quantize,
    hyper_synthesis,
    predict_params,
    symbol_pmf,
)
from .rangecoder import RangeDecoder, RangeEncoder, quantize_pmf


class CodecError(Exception):
    pass


class ChecksumError(CodecError):
    """Decoded code failed its integrity check."""


class CheckpointMismatchError(CodecError):
    """Stream was produced with different decoder-side weights."""


class GLCModel(nn.Module):
    """All codec submodules behind one config."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)
        self.codebook = VectorQuantizer(config.codebook_size, config.latent_channels)
        self.analysis = tc.AnalysisTransform(config)
        self.synthesis = tc.SynthesisTransform(config)
        self.rate_scaler = tc.RateScaler(config)
        self.hyper_analysis = HyperAnalysis(config)
        self.hyper_codebook = VectorQuantizer(
            config.effective_hyper_codebook_size, config.hyper_channels)
        self.hyper_synthesis = HyperSynthesis(config)
        self.context = QuadtreeContext(config)

    def latent_grid_size(self, orig_h: int, orig_w: int) -> tuple[int, int]:
        f = self.config.down_factor
        return (math.ceil(orig_h / f), math.ceil(orig_w / f))


# ---------------------------------------------------------------------------
# coder selection (reference implementation here; native twin is optional)


class ReferenceEncodeSession:
    def __init__(self):
        self._enc = RangeEncoder()

    def encode_chunk(self, symbols: np.ndarray, cdfs: np.ndarray) -> None:
        for s, cdf in zip(symbols, cdfs):
            self._enc.encode(int(s), cdf)

    def finish(self) -> bytes:
        return self._enc.finish()


class ReferenceDecodeSession:
    def __init__(self, payload: bytes):
        self._dec = RangeDecoder(payload)

    def decode_chunk(self, cdfs: np.ndarray) -> np.ndarray:
        return np.array([self._dec.decode(cdf) for cdf in cdfs], dtype=np.int64)

    def end(self) -> None:
        pass


class ReferenceCoder:
    name = "reference"

    def start_encode(self):
        return ReferenceEncodeSession()

    def start_decode(self, payload: bytes):
        return ReferenceDecodeSession(payload)


def get_coder(name: str | None = None):
    """Pick the entropy coder backend: 'reference' or 'native'.

    Default comes from GLC_CODER in the environment, falling back to the
    pure-Python reference coder.
    """
    name = name or os.environ.get("GLC_CODER", "reference")
    if name == "reference":
        return ReferenceCoder()
    if name == "native":
        from .native import NativeCoder

        return NativeCoder()
    raise ValueError(f"unknown coder {name!r}")


# ---------------------------------------------------------------------------
# encode / decode


def model_hash(model: GLCModel) -> bytes:
    """8-byte digest of the decode-side weights (encoder-side swaps stay compatible)."""
    decode_side = ("decoder", "synthesis", "rate_scaler", "hyper_codebook",
                   "hyper_synthesis", "context")
    h = hashlib.sha256()
    state = model.state_dict()
    for key in sorted(state):
        if key.split(".")[0] in decode_side:
            h.update(key.encode())
            h.update(state[key].detach().cpu().numpy().tobytes())
    return h.digest()[:8]


def _code_checksum(y_hat: np.ndarray) -> int:
    return zlib.crc32(y_hat.astype(">i4").tobytes())


def _step_cdfs(params, dec_scale, support):
    # context predicts in the descaled domain; convert to coding units with
    # the per-channel decode scales (identical arithmetic on both ends)
    lo, hi = support
    mean = params.mean.numpy().astype(np.float64) / dec_scale
    scale = params.scale.numpy().astype(np.float64) / dec_scale
    pmf = symbol_pmf(mean, scale, (lo, hi))
    return quantize_pmf(pmf.reshape(-1, hi - lo + 1))


def encode_image(model: GLCModel, image: torch.Tensor, q: int,
                 coder=None, encoder_override=None, return_debug: bool = False):
    """Compress an (H, W, 3) image in [0, 1] at rate index q into .glc bytes."""
    model.eval()
    coder = coder or ReferenceCoder()
    model.rate_scaler.check(q)
    image = torch.as_tensor(image, dtype=torch.float32)
    orig_h, orig_w = int(image.shape[0]), int(image.shape[1])

    if encoder_override is not None:
        lat = encode_latent(image, _EncoderProxy(model, encoder_override))
    else:
        lat = encode_latent(image, model)
    code, pre_scale = tc.analysis(lat, model, q, return_prescale=True)
    h, w, n = code.shape

    # hyper side information is computed from the pre-scale code, so one hyper
    # codebook serves every rate index
    z = hyper_analysis(pre_scale, model)
    zq, z_idx = hyper_quantize(z, model.hyper_codebook.codebook.detach())
    prior = hyper_synthesis(zq, model, (h, w))

    y_hat = torch.round(code)
    yi = y_hat.long().numpy()
    support = (min(model.config.support_lo, int(yi.min())),
               max(model.config.support_hi, int(yi.max())))

    with torch.no_grad():
        dec_scale_vec = model.rate_scaler.dec_scale(q)[0, :, 0, 0].float()
    dec_scale = dec_scale_vec.numpy().astype(np.float64)

    plan = build_quadtree_plan(h, w)
    partial = torch.zeros_like(y_hat)
    session = coder.start_encode()
    for step in range(NUM_STEPS):
        params = predict_params(model, prior, partial, plan, step)
        cdfs = _step_cdfs(params, dec_scale, support)
        g = plan.groups[step]
        symbols = (yi[g[:, 0], g[:, 1], :] - support[0]).reshape(-1)
        session.encode_chunk(symbols, cdfs)
        partial[g[:, 0], g[:, 1], :] = y_hat[g[:, 0], g[:, 1], :] * dec_scale_vec
    payload = session.finish()

    extension = model_hash(model) + struct.pack(">I", _code_checksum(yi))
    header = StreamHeader(
        orig_height=orig_h, orig_width=orig_w, rate_index=q,
        hyper_h=z_idx.shape[0], hyper_w=z_idx.shape[1],
        hyper_codebook_size=model.hyper_codebook.num_entries,
        support_lo=support[0], support_hi=support[1], extension=extension,
    )
    blob = pack_bitstream(header, z_idx.numpy(), payload)
    if return_debug:
        return blob, {"y_hat": y_hat, "latent": lat, "code": code, "plan": plan}
    return blob


class _EncoderProxy:
    """Presents an alternate encoder (e.g. a restoration encoder) as the model's."""

    def __init__(self, model, encoder):
        self.config = model.config
        self.encoder = encoder


def decode_stream_code(model: GLCModel, stream: Stream, coder=None):
    """Recover the quantized code (h, w, N) from a parsed stream."""
    coder = coder or ReferenceCoder()
    header = stream.header
    h, w = model.latent_grid_size(header.orig_height, header.orig_width)
    if (header.hyper_h, header.hyper_w) != tuple(
            math.ceil(d / 2) for d in (h, w)):
        raise CodecError(
            f"hyper grid {header.hyper_h}x{header.hyper_w} inconsistent with "
            f"latent grid {h}x{w}")

    zq = model.hyper_codebook.codebook.detach()[
        torch.from_numpy(stream.hyper_indices.ravel())
    ].reshape(header.hyper_h, header.hyper_w, -1)
    prior = hyper_synthesis(zq, model, (h, w))

    support = (header.support_lo, header.support_hi)
    plan = build_quadtree_plan(h, w)
    n = model.config.latent_channels
    with torch.no_grad():
        dec_scale_vec = model.rate_scaler.dec_scale(header.rate_index)[0, :, 0, 0].float()
    dec_scale = dec_scale_vec.numpy().astype(np.float64)
    y_hat = torch.zeros(h, w, n)
    partial = torch.zeros(h, w, n)
    session = coder.start_decode(stream.y_payload)
    for step in range(NUM_STEPS):
        params = predict_params(model, prior, partial, plan, step)
        cdfs = _step_cdfs(params, dec_scale, support)
        symbols = session.decode_chunk(cdfs)
        g = plan.groups[step]
        vals = torch.from_numpy(
            (symbols + support[0]).reshape(len(g), n)).float()
        y_hat[g[:, 0], g[:, 1], :] = vals
        partial[g[:, 0], g[:, 1], :] = vals * dec_scale_vec
    session.end()
    return y_hat


def decode_image(model: GLCModel, blob: bytes, coder=None,
                 decoder_override=None, return_debug: bool = False):
    """Decompress .glc bytes into an (H, W, 3) image in [0, 1]."""
    model.eval()
    stream = unpack_bitstream(blob)
    header = stream.header

    if len(header.extension) >= 12:
        stream_hash = header.extension[:8]
        own_hash = model_hash(model)
        if stream_hash != own_hash:
            raise CheckpointMismatchError(
                f"stream written with decoder weights {stream_hash.hex()}, "
                f"checkpoint has {own_hash.hex()}")
        (expect_crc,) = struct.unpack(">I", header.extension[8:12])
    else:
        expect_crc = None

    y_hat = decode_stream_code(model, stream, coder=coder)
    if expect_crc is not None:
        got = _code_checksum(y_hat.long().numpy())
        if got != expect_crc:
            raise ChecksumError(
                f"decoded code checksum {got:#010x} != stored {expect_crc:#010x}")

    lat = tc.synthesis(y_hat, model, header.rate_index)
    target = model if decoder_override is None else _DecoderProxy(model, decoder_override)
    img = decode_latent(lat, target, (header.orig_height, header.orig_width))
    if return_debug:
        return img, {"y_hat": y_hat, "latent": lat, "header": header}
    return img


class _DecoderProxy:
    def __init__(self, model, decoder):
        self.config = model.config
        self.decoder = decoder


def compressed_bpp(blob: bytes, orig_h: int, orig_w: int) -> float:
    return 8.0 * len(blob) / (orig_h * orig_w)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "glc-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: GLCModel, stage: str,
                    extras: dict | None = None, metadata: dict | None = None) -> None:
    """Write a self-describing checkpoint: config, stage provenance, weights."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "stage": stage,
        "model": model.state_dict(),
        "extras": {k: v.state_dict() for k, v in (extras or {}).items()},
        "metadata": metadata or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (model, raw checkpoint dict)."""
    data = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise CodecError(f"{path} is not a codec checkpoint")
    if data.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CodecError(f"unsupported checkpoint version {data.get('checkpoint_version')}")
    model = GLCModel(ModelConfig.from_dict(data["config"]))
    model.load_state_dict(data["model"])
    model.eval()
    return model, data
