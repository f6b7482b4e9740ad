import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glc.bitstream import (
    BitstreamError,
    Stream,
    StreamHeader,
    hyper_section_bytes,
    index_bits,
    pack_bitstream,
    pack_indices,
    unpack_bitstream,
    unpack_indices,
)


def make_stream(rng, hh=4, hw=4, mh=64, ext=b""):
    header = StreamHeader(
        orig_height=int(rng.integers(1, 5000)),
        orig_width=int(rng.integers(1, 5000)),
        rate_index=int(rng.integers(0, 4)),
        hyper_h=hh, hyper_w=hw, hyper_codebook_size=mh,
        support_lo=int(rng.integers(-200, 0)),
        support_hi=int(rng.integers(0, 200)),
        extension=ext,
    )
    indices = rng.integers(0, mh, size=(hh, hw))
    payload = rng.bytes(int(rng.integers(0, 500)))
    return Stream(header, indices, payload)


def test_hyper_section_size_matches_fixed_length_cost():
    # 16x16 grid at 10 bits per index is 2560 bits -> 320 bytes
    assert index_bits(1024) == 10
    assert hyper_section_bytes(16, 16, 1024) == 320
    rng = np.random.default_rng(0)
    s = make_stream(rng, hh=16, hw=16, mh=1024)
    blob = pack_bitstream(s.header, s.hyper_indices, s.y_payload)
    overhead = len(blob) - len(s.y_payload)
    fixed = 28  # fixed header fields
    assert overhead == fixed + len(s.header.extension) + 320 + 4


def test_non_power_of_two_codebook_uses_ceiling_bits():
    assert index_bits(1000) == 10
    assert index_bits(2) == 1
    assert index_bits(3) == 2


def test_pack_unpack_identity():
    rng = np.random.default_rng(1)
    s = make_stream(rng, ext=b"\x01\x02hash")
    blob = pack_bitstream(s.header, s.hyper_indices, s.y_payload)
    assert unpack_bitstream(blob) == s


def test_random_header_round_trips():
    rng = np.random.default_rng(2)
    for _ in range(100):
        mh = int(rng.integers(2, 5000))
        s = make_stream(rng, hh=int(rng.integers(1, 20)), hw=int(rng.integers(1, 20)),
                        mh=mh, ext=rng.bytes(int(rng.integers(0, 32))))
        blob = pack_bitstream(s.header, s.hyper_indices, s.y_payload)
        assert unpack_bitstream(blob) == s


def test_corrupted_magic_rejected():
    rng = np.random.default_rng(3)
    s = make_stream(rng)
    blob = bytearray(pack_bitstream(s.header, s.hyper_indices, s.y_payload))
    blob[0] ^= 0xFF
    with pytest.raises(BitstreamError, match="magic"):
        unpack_bitstream(bytes(blob))


def test_unknown_version_rejected():
    rng = np.random.default_rng(4)
    s = make_stream(rng)
    blob = bytearray(pack_bitstream(s.header, s.hyper_indices, s.y_payload))
    blob[4] = 2
    with pytest.raises(BitstreamError, match="version"):
        unpack_bitstream(bytes(blob))


def test_truncation_rejected():
    rng = np.random.default_rng(5)
    s = make_stream(rng)
    blob = pack_bitstream(s.header, s.hyper_indices, s.y_payload)
    for cut in (3, 10, len(blob) - 1):
        with pytest.raises(BitstreamError):
            unpack_bitstream(blob[:cut])


def test_field_overflow_rejected():
    rng = np.random.default_rng(6)
    s = make_stream(rng)
    s.header.orig_height = 2**32
    with pytest.raises(BitstreamError, match="overflow"):
        pack_bitstream(s.header, s.hyper_indices, s.y_payload)


def test_index_out_of_range_rejected():
    with pytest.raises(BitstreamError):
        pack_indices(np.array([8]), 3)
    with pytest.raises(BitstreamError):
        pack_indices(np.array([-1]), 3)


@settings(max_examples=100, deadline=None)
@given(
    bits=st.integers(1, 16),
    count=st.integers(0, 200),
    seed=st.integers(0, 2**31),
)
def test_bit_packing_round_trip(bits, count, seed):
    rng = np.random.default_rng(seed)
    values = rng.integers(0, 1 << bits, size=count)
    packed = pack_indices(values, bits)
    assert len(packed) == (count * bits + 7) // 8
    assert np.array_equal(unpack_indices(packed, count, bits), values)
