"""Range coder on its own: code symbols against known distributions and watch
the byte count track the entropy.

The coder is integer-only (32-bit state, 16-bit probabilities, byte-wise
renormalization), so streams are bit-exact across runs and platforms.
"""

import numpy as np

from glc.rangecoder import TOTAL, ideal_codelength_bits, quantize_pmf, range_decode, range_encode

rng = np.random.default_rng(0)

# a skewed 8-symbol source
pmf = np.array([0.5, 0.2, 0.1, 0.08, 0.05, 0.04, 0.02, 0.01])
cdf = quantize_pmf(pmf)
print("pmf:", pmf)
print("quantized cdf:", cdf, f"(total {TOTAL})")

n = 20_000
symbols = rng.choice(8, size=n, p=pmf)
payload = range_encode(symbols, [cdf] * n)

entropy = -(pmf * np.log2(pmf)).sum()
ideal = ideal_codelength_bits(symbols, [cdf] * n)
print(f"\n{n} symbols, source entropy {entropy:.3f} bits/symbol")
print(f"ideal codelength {ideal / 8:.0f} bytes, actual payload {len(payload)} bytes "
      f"({8 * len(payload) / n:.3f} bits/symbol)")

decoded = range_decode(payload, lambda prev: cdf, n)
print("lossless round trip:", np.array_equal(decoded, symbols))

# adaptive coding: the distribution for each symbol depends on the previous one
tables = [quantize_pmf(rng.dirichlet(np.ones(8))) for _ in range(8)]


def cdf_for(prev):
    return tables[prev[-1] if prev else 0]


adaptive_symbols = []
from glc.rangecoder import RangeEncoder

enc = RangeEncoder()
for _ in range(5_000):
    c = cdf_for(adaptive_symbols)
    s = int(rng.choice(8, p=np.diff(c) / TOTAL))
    enc.encode(s, c)
    adaptive_symbols.append(s)
adaptive_payload = enc.finish()
decoded = range_decode(adaptive_payload, cdf_for, len(adaptive_symbols))
print("adaptive round trip:", decoded == adaptive_symbols,
      f"({len(adaptive_payload)} bytes)")
