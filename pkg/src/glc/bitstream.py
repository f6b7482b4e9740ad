"""Container format for compressed streams (.glc files).

Layout, all multi-byte fields big-endian:

    magic            4 bytes  b"GLC1"
    version          1 byte
    orig_height      4 bytes  unsigned
    orig_width       4 bytes  unsigned
    rate_index       1 byte
    hyper_h          2 bytes  unsigned
    hyper_w          2 bytes  unsigned
    hyper_codebook   4 bytes  unsigned (M_h)
    support_lo       2 bytes  signed
    support_hi       2 bytes  signed
    ext_len          2 bytes  unsigned
    extension        ext_len bytes (checkpoint hash, code checksum)
    hyper payload    ceil(hyper_h*hyper_w*ceil(log2 M_h)/8) bytes
    y_payload_len    4 bytes  unsigned
    y payload        range-coded bytes

Hyper indices are packed MSB-first at a fixed ceil(log2 M_h) bits per index.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"GLC1"
VERSION = 1


class BitstreamError(Exception):
    """Malformed or unsupported container data."""


@dataclass
class StreamHeader:
    orig_height: int
    orig_width: int
    rate_index: int
    hyper_h: int
    hyper_w: int
    hyper_codebook_size: int
    support_lo: int
    support_hi: int
    extension: bytes = b""
    version: int = VERSION


@dataclass
class Stream:
    header: StreamHeader
    hyper_indices: np.ndarray  # (hyper_h, hyper_w) int
    y_payload: bytes

    def __eq__(self, other):
        return (self.header == other.header
                and np.array_equal(self.hyper_indices, other.hyper_indices)
                and self.y_payload == other.y_payload)


def index_bits(codebook_size: int) -> int:
    """Fixed-length bits per hyper index: ceil(log2 M_h)."""
    if codebook_size < 2:
        raise BitstreamError(f"codebook size must be >= 2, got {codebook_size}")
    return int(math.ceil(math.log2(codebook_size)))


def hyper_section_bytes(h: int, w: int, codebook_size: int) -> int:
    return (h * w * index_bits(codebook_size) + 7) // 8


def pack_indices(indices: np.ndarray, bits: int) -> bytes:
    """Pack integers MSB-first at a fixed bit width."""
    flat = np.asarray(indices, dtype=np.int64).ravel()
    if flat.size and (flat.min() < 0 or flat.max() >= (1 << bits)):
        raise BitstreamError(f"index out of range for {bits}-bit packing")
    out = bytearray()
    acc = 0
    nbits = 0
    for v in flat:
        acc = (acc << bits) | int(v)
        nbits += bits
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def unpack_indices(data: bytes, count: int, bits: int) -> np.ndarray:
    if len(data) < (count * bits + 7) // 8:
        raise BitstreamError("hyper section truncated")
    out = np.empty(count, dtype=np.int64)
    acc = 0
    nbits = 0
    pos = 0
    for i in range(count):
        while nbits < bits:
            acc = (acc << 8) | data[pos]
            pos += 1
            nbits += 8
        nbits -= bits
        out[i] = (acc >> nbits) & ((1 << bits) - 1)
    return out


_FIXED = struct.Struct(">4sBIIBHHIhhH")


def pack_bitstream(header: StreamHeader, hyper_indices: np.ndarray, y_payload: bytes) -> bytes:
    """Serialize header + fixed-length hyper section + range-coded payload."""
    idx = np.asarray(hyper_indices, dtype=np.int64)
    if idx.shape != (header.hyper_h, header.hyper_w):
        raise BitstreamError(
            f"hyper indices shape {idx.shape} does not match header "
            f"({header.hyper_h}, {header.hyper_w})")
    if not (0 <= header.orig_height <= 0xFFFFFFFF and 0 <= header.orig_width <= 0xFFFFFFFF):
        raise BitstreamError("image dimensions overflow header fields")
    if not 0 <= header.rate_index <= 0xFF:
        raise BitstreamError("rate index overflows header field")
    if not -0x8000 <= header.support_lo <= 0x7FFF or not -0x8000 <= header.support_hi <= 0x7FFF:
        raise BitstreamError("support bounds overflow header fields")
    if len(header.extension) > 0xFFFF:
        raise BitstreamError("extension too long")
    if len(y_payload) > 0xFFFFFFFF:
        raise BitstreamError("payload too long")

    bits = index_bits(header.hyper_codebook_size)
    parts = [
        _FIXED.pack(MAGIC, header.version, header.orig_height, header.orig_width,
                    header.rate_index, header.hyper_h, header.hyper_w,
                    header.hyper_codebook_size, header.support_lo, header.support_hi,
                    len(header.extension)),
        header.extension,
        pack_indices(idx, bits),
        struct.pack(">I", len(y_payload)),
        y_payload,
    ]
    return b"".join(parts)


def unpack_bitstream(data: bytes) -> Stream:
    """Parse a serialized stream; exact inverse of pack_bitstream."""
    if len(data) < _FIXED.size:
        raise BitstreamError("stream shorter than fixed header")
    (magic, version, oh, ow, q, hh, hw, mh, slo, shi, ext_len) = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}")
    pos = _FIXED.size
    if len(data) < pos + ext_len:
        raise BitstreamError("extension truncated")
    extension = data[pos:pos + ext_len]
    pos += ext_len

    nbytes = hyper_section_bytes(hh, hw, mh)
    if len(data) < pos + nbytes:
        raise BitstreamError("hyper section truncated")
    bits = index_bits(mh)
    indices = unpack_indices(data[pos:pos + nbytes], hh * hw, bits).reshape(hh, hw)
    pos += nbytes

    if len(data) < pos + 4:
        raise BitstreamError("payload length field truncated")
    (plen,) = struct.unpack_from(">I", data, pos)
    pos += 4
    if len(data) < pos + plen:
        raise BitstreamError("payload truncated")
    payload = data[pos:pos + plen]

    header = StreamHeader(orig_height=oh, orig_width=ow, rate_index=q, hyper_h=hh,
                          hyper_w=hw, hyper_codebook_size=mh, support_lo=slo,
                          support_hi=shi, extension=extension, version=version)
    return Stream(header=header, hyper_indices=indices, y_payload=payload)
