"""Byte-oriented range coder with 16-bit probability precision.

Integer-only 32-bit range coder (carry-propagating, byte-wise renormalization).
Symbol probabilities are given as cumulative frequency tables (cdf) with a
fixed total of 2**16, so every in-support symbol carries at least one
frequency unit and the coder never sees a zero-probability symbol.

The encoder emits a leading zero byte and five flush bytes, so an empty
stream is exactly 5 bytes and total overhead stays under 8 bytes.
"""

from __future__ import annotations

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION          # cdf total, 65536
PROB_FLOOR = 1.0 / TOTAL        # minimum per-symbol probability, 2**-16
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class CoderError(Exception):
    """Base class for range coder failures."""


class InvalidCdfError(CoderError):
    pass


class SymbolOutOfRangeError(CoderError):
    pass


class TruncatedPayloadError(CoderError):
    pass


def validate_cdf(cdf) -> np.ndarray:
    """Check a cumulative frequency table: first 0, last TOTAL, strictly increasing."""
    cdf = np.asarray(cdf, dtype=np.int64)
    if cdf.ndim != 1 or cdf.size < 2:
        raise InvalidCdfError("cdf must be a 1-D array with at least two entries")
    if cdf[0] != 0 or cdf[-1] != TOTAL:
        raise InvalidCdfError(f"cdf must run from 0 to {TOTAL}, got [{cdf[0]}, {cdf[-1]}]")
    if np.any(np.diff(cdf) <= 0):
        raise InvalidCdfError("cdf must be strictly increasing")
    return cdf


def quantize_pmf(pmf: np.ndarray) -> np.ndarray:
    """Turn float pmfs into integer cdfs summing to TOTAL, one frequency unit minimum.

    Accepts shape (S,) or (n, S); returns (S+1,) or (n, S+1) int64 cdf rows.
    This quantization is the single definition shared by the encoder, the
    decoder and the rate-estimate tests.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    squeeze = pmf.ndim == 1
    if squeeze:
        pmf = pmf[None, :]
    n, s = pmf.shape
    if s < 1:
        raise InvalidCdfError("empty pmf")
    if s > TOTAL:
        raise InvalidCdfError(f"support too wide for {PRECISION}-bit cdf: {s}")
    if not np.all(np.isfinite(pmf)) or np.any(pmf < 0):
        raise InvalidCdfError("pmf must be finite and non-negative")

    cdf = np.zeros((n, s + 1), dtype=np.int64)
    cdf[:, 1:] = np.round(np.cumsum(pmf, axis=1) * TOTAL).astype(np.int64)
    cdf[:, -1] = TOTAL
    # force strict monotonicity: raise flats forward, then cap from the top so
    # every later symbol still has room for one unit
    idx = np.arange(s + 1, dtype=np.int64)
    cdf = np.maximum.accumulate(cdf - idx, axis=1) + idx
    cdf = np.minimum(cdf, TOTAL - s + idx)
    return cdf[0] if squeeze else cdf


class RangeEncoder:
    """Streaming encoder; call encode() per symbol, then finish() for the bytes."""

    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def encode(self, symbol: int, cdf: np.ndarray) -> None:
        if not 0 <= symbol < len(cdf) - 1:
            raise SymbolOutOfRangeError(f"symbol {symbol} outside cdf with {len(cdf) - 1} entries")
        cum_lo = int(cdf[symbol])
        cum_hi = int(cdf[symbol + 1])
        r = self.range // TOTAL
        self.low += r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        while self.range < _TOP:
            self._shift_low()
            self.range = (self.range << 8) & _MASK32

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            self.out.append((self.cache + carry) & 0xFF)
            for _ in range(self.cache_size - 1):
                self.out.append((0xFF + carry) & 0xFF)
            self.cache_size = 0
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    """Streaming decoder over an encoded payload.

    decode() needs the same cdf the encoder used for that symbol, which lets
    the caller recompute context-adaptive tables from already-decoded symbols.
    """

    def __init__(self, payload: bytes):
        self.data = payload
        self.pos = 0
        self.range = _MASK32
        self._next_byte()  # leading zero byte from the encoder's first shift
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise TruncatedPayloadError(f"payload exhausted at byte {self.pos}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, cdf: np.ndarray) -> int:
        r = self.range // TOTAL
        value = self.code // r
        if value >= TOTAL:
            value = TOTAL - 1
        symbol = int(np.searchsorted(cdf, value, side="right")) - 1
        cum_lo = int(cdf[symbol])
        cum_hi = int(cdf[symbol + 1])
        self.code -= r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range = (self.range << 8) & _MASK32
        return symbol


def range_encode(symbols, cdfs) -> bytes:
    """Encode a symbol sequence, one cdf per symbol.

    cdfs may be a 2-D array (one row per symbol), a list of 1-D arrays, or a
    single 1-D cdf shared by all symbols.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    cdfs = _per_symbol_cdfs(cdfs, len(symbols))
    enc = RangeEncoder()
    for s, cdf in zip(symbols, cdfs):
        enc.encode(int(s), cdf)
    return enc.finish()


def range_decode(payload: bytes, cdf_provider, n: int) -> list[int]:
    """Decode n symbols; cdf_provider(decoded_so_far) returns the next cdf."""
    dec = RangeDecoder(payload)
    out: list[int] = []
    for _ in range(n):
        out.append(dec.decode(cdf_provider(out)))
    return out


def ideal_codelength_bits(symbols, cdfs) -> float:
    """Sum of -log2 p over the stream using the quantized cdf probabilities."""
    symbols = np.asarray(symbols, dtype=np.int64)
    total = 0.0
    for s, cdf in zip(symbols, _per_symbol_cdfs(cdfs, len(symbols))):
        freq = int(cdf[int(s) + 1]) - int(cdf[int(s)])
        total += -np.log2(freq / TOTAL)
    return float(total)


def _per_symbol_cdfs(cdfs, n):
    if isinstance(cdfs, np.ndarray) and cdfs.ndim == 2:
        if len(cdfs) != n:
            raise InvalidCdfError(f"need {n} cdfs, got {len(cdfs)}")
        cdfs = cdfs.astype(np.int64)
        if (np.any(cdfs[:, 0] != 0) or np.any(cdfs[:, -1] != TOTAL)
                or np.any(np.diff(cdfs, axis=1) <= 0)):
            raise InvalidCdfError("malformed cdf row in batch")
        return cdfs
    if isinstance(cdfs, np.ndarray) and cdfs.ndim == 1:
        cdf = validate_cdf(cdfs)
        return [cdf] * n
    if len(cdfs) != n:
        raise InvalidCdfError(f"need {n} cdfs, got {len(cdfs)}")
    return [validate_cdf(c) for c in cdfs]
