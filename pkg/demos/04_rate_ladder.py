"""One model, four operating points: the learned per-channel scalers move the
codec along the rate-distortion curve without retraining.

Runs against the checkpoint from demo 03 (trains a small one if missing).
"""

import os

import numpy as np
import torch

from glc.autoencoder import encode_latent, vq_nearest
from glc.codec import compressed_bpp, decode_image, encode_image, load_checkpoint
from glc.evaluate import ms_ssim, psnr

scratch = os.path.join(os.path.dirname(__file__), "_scratch")
final = os.path.join(scratch, "stage3.pt")
if not os.path.exists(final):
    print("no checkpoint found; run demos/03_train_and_roundtrip.py first")
    raise SystemExit(1)

model, _ = load_checkpoint(final)
from glc.data import synthetic_images

images = synthetic_images(12, size=48, seed=99)

print("q  lambda   bpp     psnr   ms_ssim  latent_mse")
for q in range(model.config.num_rate_levels):
    bpps, psnrs, ssims, lmses = [], [], [], []
    for img in images:
        it = torch.from_numpy(img)
        blob = encode_image(model, it, q=q)
        rec, dbg = decode_image(model, blob, return_debug=True)
        bpps.append(compressed_bpp(blob, img.shape[0], img.shape[1]))
        psnrs.append(psnr(img, rec.numpy()))
        ssims.append(ms_ssim(img, rec.numpy()))
        lat = encode_latent(it, model)
        lmses.append(float(((dbg["latent"] - lat) ** 2).mean()))
    print(f"{q}  {model.config.lambda_ladder[q]:>6}  {np.mean(bpps):.4f}  "
          f"{np.mean(psnrs):5.2f}  {np.mean(ssims):.4f}   {np.mean(lmses):.5f}")

# fixed-length indices-map coding of the same latents, for contrast
import math

bits = math.ceil(math.log2(model.config.codebook_size))
bpps, lmses = [], []
for img in images:
    lat = encode_latent(torch.from_numpy(img), model)
    quant, _ = vq_nearest(lat, model.codebook.codebook.detach())
    bpps.append(lat.shape[0] * lat.shape[1] * bits / (img.shape[0] * img.shape[1]))
    lmses.append(float(((quant - lat) ** 2).mean()))
print(f"\nindices-map baseline: bpp={np.mean(bpps):.4f} latent_mse={np.mean(lmses):.5f}")
