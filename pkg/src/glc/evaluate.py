"""Evaluation: quality metrics, rate-distortion points, patch extraction for
distribution metrics, and Bjontegaard delta-rate between RD curves."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .codec import compressed_bpp, decode_image, encode_image
from .autoencoder import encode_latent

PSNR_CAP_DB = 99.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * math.log10(mse))


def _gauss_kernel():
    half = _SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2 * _SSIM_SIGMA ** 2))
    return k / k.sum()


def _filter2(img, kernel):
    # separable valid-mode gaussian, applied per channel
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    half = _SSIM_WINDOW // 2
    return out[half:-half, half:-half]


def _ssim_and_cs(a, b):
    k = _gauss_kernel()
    mu_a = _filter2(a, k)
    mu_b = _filter2(b, k)
    var_a = _filter2(a * a, k) - mu_a ** 2
    var_b = _filter2(b * b, k) - mu_b ** 2
    cov = _filter2(a * b, k) - mu_a * mu_b
    cs = (2 * cov + _C2) / (var_a + var_b + _C2)
    ssim = ((2 * mu_a * mu_b + _C1) / (mu_a ** 2 + mu_b ** 2 + _C1)) * cs
    return float(ssim.mean()), float(cs.mean())


def _downsample2(img):
    h, w = img.shape[:2]
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Multi-scale SSIM, 5 scales with the standard weights.

    Images smaller than the window at deeper scales fall back to however many
    scales fit, with the weights renormalized.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    levels = 0
    dim = min(a.shape[0], a.shape[1])
    while levels < len(MS_SSIM_WEIGHTS) and dim >= _SSIM_WINDOW:
        levels += 1
        dim //= 2
    if levels == 0:
        raise ValueError(f"image {a.shape} smaller than the SSIM window")
    weights = np.array(MS_SSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()

    score = 1.0
    for level in range(levels):
        ssim_vals, cs_vals = [], []
        for c in range(a.shape[2]):
            s, cs = _ssim_and_cs(a[:, :, c], b[:, :, c])
            ssim_vals.append(s)
            cs_vals.append(cs)
        if level < levels - 1:
            score *= max(np.mean(cs_vals), 0.0) ** weights[level]
            a = _downsample2(a)
            b = _downsample2(b)
        else:
            score *= max(np.mean(ssim_vals), 0.0) ** weights[level]
    return float(score)


# ---------------------------------------------------------------------------
# RD evaluation


@dataclass
class RDPoint:
    bpp: float
    metrics: dict

    def __post_init__(self):
        if self.bpp <= 0:
            raise ValueError("bpp must be positive")


@dataclass
class EvalReport:
    per_image: list = field(default_factory=list)  # rows: {q, image, bpp, metrics}
    aggregates: list = field(default_factory=list)  # rows: {q, bpp, metrics}

    def aggregate_for(self, q: int) -> dict:
        for row in self.aggregates:
            if row["q"] == q:
                return row
        raise KeyError(f"no aggregate for rate index {q}")

    def curve(self, metric: str) -> list:
        return [RDPoint(bpp=row["bpp"], metrics={metric: row["metrics"][metric]})
                for row in sorted(self.aggregates, key=lambda r: r["bpp"])]

    def to_json(self, path=None) -> str:
        text = json.dumps({"per_image": self.per_image, "aggregates": self.aggregates},
                          indent=2)
        if path:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        with open(path) as fh:
            data = json.load(fh)
        return cls(per_image=data["per_image"], aggregates=data["aggregates"])


def evaluate_model(model, images, q_list, coder=None, extra_metrics=None,
                   image_names=None) -> EvalReport:
    """Encode and decode every image at every rate index; aggregate per index.

    images: iterable of (H, W, 3) arrays in [0, 1]. extra_metrics maps a name
    to a callable(reference, reconstruction) -> float plugged into each row.
    Aggregates are arithmetic means of the per-image values.
    """
    images = list(images)
    if not images:
        raise ValueError("empty dataset")
    names = image_names or [f"img{i:04d}" for i in range(len(images))]
    report = EvalReport()
    for q in q_list:
        rows = []
        for name, img in zip(names, images):
            img_t = torch.as_tensor(np.asarray(img), dtype=torch.float32)
            blob = encode_image(model, img_t, q=q, coder=coder)
            rec, debug = decode_image(model, blob, coder=coder, return_debug=True)
            rec_np = rec.numpy()
            lat = encode_latent(img_t, model)
            metrics = {
                "psnr": psnr(img, rec_np),
                "ms_ssim": ms_ssim(img, rec_np),
                "latent_mse": float(((lat - debug["latent"]) ** 2).mean()),
            }
            for mname, fn in (extra_metrics or {}).items():
                metrics[mname] = float(fn(img, rec_np))
            rows.append({"q": q, "image": name,
                         "bpp": compressed_bpp(blob, img.shape[0], img.shape[1]),
                         "metrics": metrics})
        report.per_image.extend(rows)
        agg_metrics = {k: float(np.mean([r["metrics"][k] for r in rows]))
                       for k in rows[0]["metrics"]}
        report.aggregates.append({
            "q": q,
            "bpp": float(np.mean([r["bpp"] for r in rows])),
            "metrics": agg_metrics,
        })
    return report


def extract_eval_patches(image: np.ndarray, patch: int = 256,
                         shift: int = 128) -> list:
    """Aligned patches plus a half-shifted second grid, for distribution metrics.

    An H x W image yields floor(H/p)*floor(W/p) + (floor(H/p)-1)*(floor(W/p)-1)
    patches; images smaller than the patch in either dimension yield none.
    """
    h, w = image.shape[:2]
    if h < patch or w < patch:
        warnings.warn(f"image {h}x{w} smaller than {patch}; no patches extracted")
        return []
    patches = []
    nh, nw = h // patch, w // patch
    for i in range(nh):
        for j in range(nw):
            patches.append(image[i * patch:(i + 1) * patch, j * patch:(j + 1) * patch])
    for i in range(nh - 1):
        for j in range(nw - 1):
            r = shift + i * patch
            c = shift + j * patch
            patches.append(image[r:r + patch, c:c + patch])
    return patches


# ---------------------------------------------------------------------------
# BD-rate


class CurveOverlapError(ValueError):
    pass


def _curve_arrays(points, metric):
    bpp = np.array([p.bpp if isinstance(p, RDPoint) else p["bpp"] for p in points])
    vals = np.array([
        (p.metrics if isinstance(p, RDPoint) else p["metrics"])[metric]
        for p in points
    ])
    order = np.argsort(vals)
    return vals[order], np.log10(bpp[order])


def bd_rate(curve_ref, curve_test, metric: str) -> float:
    """Bjontegaard delta-rate in percent; negative means the test curve saves bits.

    Cubic fit of log10(bpp) as a function of the metric, integrated over the
    curves' common metric interval.
    """
    if len(curve_ref) < 4 or len(curve_test) < 4:
        raise ValueError("need at least 4 points per curve")
    ref_m, ref_r = _curve_arrays(curve_ref, metric)
    test_m, test_r = _curve_arrays(curve_test, metric)
    lo = max(ref_m.min(), test_m.min())
    hi = min(ref_m.max(), test_m.max())
    if hi <= lo:
        raise CurveOverlapError(
            f"metric ranges do not overlap: [{ref_m.min()}, {ref_m.max()}] vs "
            f"[{test_m.min()}, {test_m.max()}]")
    p_ref = np.polyfit(ref_m, ref_r, 3)
    p_test = np.polyfit(test_m, test_r, 3)
    int_ref = np.polyint(p_ref)
    int_test = np.polyint(p_test)
    avg_ref = (np.polyval(int_ref, hi) - np.polyval(int_ref, lo)) / (hi - lo)
    avg_test = (np.polyval(int_test, hi) - np.polyval(int_test, lo)) / (hi - lo)
    return float((10.0 ** (avg_test - avg_ref) - 1.0) * 100.0)
