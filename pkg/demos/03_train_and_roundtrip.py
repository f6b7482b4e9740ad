"""Three-stage toy training, then a real file-level round trip.

Stage I fits the generative auto-encoder and its codebook; stage II freezes
them and fits transform coding plus the entropy model; stage III fine-tunes
jointly. The resulting checkpoint encodes images into decodable .glc bytes.
"""

import os
import time

import torch

from glc.codec import compressed_bpp, decode_image, encode_image, load_checkpoint
from glc.config import toy_config
from glc.data import synthetic_images
from glc.training import run_pipeline

scratch = os.path.join(os.path.dirname(__file__), "_scratch")
os.makedirs(scratch, exist_ok=True)
final = os.path.join(scratch, "stage3.pt")

if os.path.exists(final):
    print(f"reusing checkpoint {final}")
else:
    images = synthetic_images(96, size=48, seed=0)
    t0 = time.monotonic()
    run_pipeline(toy_config(), images, scratch, stage_steps=(200, 400, 60), seed=0)
    print(f"trained 3 stages in {time.monotonic() - t0:.0f}s")

model, ckpt = load_checkpoint(final)
print(f"checkpoint stage: {ckpt['stage']}")

img = torch.from_numpy(synthetic_images(1, size=48, seed=42)[0])
blob, enc_debug = encode_image(model, img, q=1, return_debug=True)
rec, dec_debug = decode_image(model, blob, return_debug=True)

print(f"\nencoded 48x48 image: {len(blob)} bytes "
      f"({compressed_bpp(blob, 48, 48):.3f} bpp)")
print("quantized code recovered bit-exactly:",
      torch.equal(enc_debug["y_hat"], dec_debug["y_hat"]))
print(f"pixel mse: {float(((rec - img) ** 2).mean()):.5f}")
print(f"reconstruction in [0, 1]: {float(rec.min()):.3f}..{float(rec.max()):.3f}")
