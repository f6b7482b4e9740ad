"""Anatomy of a .glc stream: header fields, the fixed-length hyper section and
the range-coded payload.

Hyper indices are never arithmetic-coded: each one costs exactly
ceil(log2 M_h) bits, so a 16x16 hyper grid with a 1024-entry hyper codebook
always occupies 2560 bits of the stream.
"""

import torch

from glc.bitstream import hyper_section_bytes, index_bits, unpack_bitstream
from glc.codec import GLCModel, encode_image
from glc.config import toy_config

torch.manual_seed(0)
model = GLCModel(toy_config()).eval()

img = torch.rand(48, 40, 3)  # not divisible by 4: exercise padding
blob = encode_image(model, img, q=2)
stream = unpack_bitstream(blob)
h = stream.header

print(f"file size: {len(blob)} bytes -> {8 * len(blob) / (48 * 40):.3f} bpp")
print(f"original size: {h.orig_height}x{h.orig_width} (padding cropped on decode)")
print(f"rate index: {h.rate_index}")
print(f"hyper grid: {h.hyper_h}x{h.hyper_w}, codebook {h.hyper_codebook_size} "
      f"-> {index_bits(h.hyper_codebook_size)} bits/index, "
      f"{hyper_section_bytes(h.hyper_h, h.hyper_w, h.hyper_codebook_size)} bytes")
print(f"code support: [{h.support_lo}, {h.support_hi}]")
print(f"extension (decoder-weights hash + code checksum): {h.extension.hex()}")
print(f"range-coded payload: {len(stream.y_payload)} bytes")

print("\nfixed-length cost at paper scale: 16x16 grid, M_h=1024 ->",
      16 * 16 * index_bits(1024), "bits =", hyper_section_bytes(16, 16, 1024), "bytes")
