import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glc.rangecoder import (
    TOTAL,
    InvalidCdfError,
    RangeDecoder,
    RangeEncoder,
    SymbolOutOfRangeError,
    TruncatedPayloadError,
    ideal_codelength_bits,
    quantize_pmf,
    range_decode,
    range_encode,
    validate_cdf,
)


def uniform_cdf(n_symbols):
    assert TOTAL % n_symbols == 0
    return np.arange(n_symbols + 1, dtype=np.int64) * (TOTAL // n_symbols)


def random_cdf(rng, n_symbols):
    # random positive frequencies renormalized to TOTAL with >=1 per symbol
    pmf = rng.dirichlet(np.ones(n_symbols) * 0.3)
    return quantize_pmf(pmf)


def test_empty_stream_is_flush_only():
    payload = range_encode([], np.empty((0, 2), dtype=np.int64))
    assert len(payload) <= 8
    # decoding zero symbols consumes only the flush bytes
    assert range_decode(payload, lambda prev: uniform_cdf(2), 0) == []


def test_uniform_256_costs_8_bits_per_symbol():
    # uniform 256-symbol cdf has exactly 2**16/256 units per symbol -> 8 bits
    rng = np.random.default_rng(0)
    symbols = rng.integers(0, 256, size=10_000)
    cdf = uniform_cdf(256)
    payload = range_encode(symbols, np.tile(cdf, (len(symbols), 1)))
    assert 9_990 <= len(payload) <= 10_010
    decoded = range_decode(payload, lambda prev: cdf, len(symbols))
    assert np.array_equal(decoded, symbols)


def test_near_deterministic_stream_is_tiny():
    # one symbol holds 65535/65536 of the mass; 1e4 repeats cost ~0.22 bits total
    cdf = np.array([0, 1, TOTAL], dtype=np.int64)
    symbols = np.ones(10_000, dtype=np.int64)
    payload = range_encode(symbols, [cdf] * len(symbols))
    assert len(payload) <= 40
    assert range_decode(payload, lambda prev: cdf, len(symbols)) == [1] * len(symbols)


def test_large_random_round_trip():
    rng = np.random.default_rng(1)
    n = 100_000
    cdf = random_cdf(rng, 64)
    pmf = np.diff(cdf) / TOTAL
    symbols = rng.choice(64, size=n, p=pmf)
    payload = range_encode(symbols, [cdf] * n)
    decoded = range_decode(payload, lambda prev: cdf, n)
    assert np.array_equal(decoded, symbols)


def test_coded_length_close_to_ideal():
    rng = np.random.default_rng(2)
    for trial in range(5):
        n = 2_000
        cdfs = np.stack([random_cdf(rng, 16) for _ in range(n)])
        # draw each symbol from its own cdf so the stream matches the model
        symbols = np.array([
            rng.choice(16, p=np.diff(c) / TOTAL) for c in cdfs
        ])
        payload = range_encode(symbols, cdfs)
        ideal = ideal_codelength_bits(symbols, cdfs)
        assert len(payload) * 8 <= ideal * 1.02 + 64


def test_per_symbol_length_bound():
    rng = np.random.default_rng(3)
    cdfs = [random_cdf(rng, 8) for _ in range(500)]
    symbols = [int(rng.integers(0, 8)) for _ in range(500)]
    payload = range_encode(symbols, cdfs)
    ideal = ideal_codelength_bits(symbols, cdfs)
    assert len(payload) <= np.ceil(ideal / 8) + 8


def test_adaptive_cdf_provider_round_trip():
    # cdf for each symbol depends on the previously decoded symbol
    rng = np.random.default_rng(4)
    tables = [random_cdf(rng, 10) for _ in range(10)]

    def cdf_for(prev):
        return tables[prev[-1] if prev else 0]

    symbols = []
    enc = RangeEncoder()
    for _ in range(5_000):
        cdf = cdf_for(symbols)
        s = int(rng.choice(10, p=np.diff(cdf) / TOTAL))
        enc.encode(s, cdf)
        symbols.append(s)
    payload = enc.finish()

    decoded = range_decode(payload, cdf_for, len(symbols))
    assert decoded == symbols


def test_truncated_payload_raises():
    cdf = uniform_cdf(256)
    symbols = list(range(256)) * 4
    payload = range_encode(symbols, [cdf] * len(symbols))
    with pytest.raises(TruncatedPayloadError):
        range_decode(payload[: len(payload) // 2], lambda prev: cdf, len(symbols))
    with pytest.raises(TruncatedPayloadError):
        RangeDecoder(b"\x00\x01")


def test_symbol_out_of_support_raises():
    cdf = uniform_cdf(4)
    with pytest.raises(SymbolOutOfRangeError):
        range_encode([4], [cdf])


def test_malformed_cdf_raises():
    with pytest.raises(InvalidCdfError):
        validate_cdf(np.array([0, 5, 5, TOTAL]))
    with pytest.raises(InvalidCdfError):
        validate_cdf(np.array([1, TOTAL]))
    with pytest.raises(InvalidCdfError):
        validate_cdf(np.array([0, TOTAL - 1]))
    bad = np.stack([uniform_cdf(4), np.array([0, 9, 9, 10, TOTAL])])
    with pytest.raises(InvalidCdfError):
        range_encode([0, 0], bad)


def test_determinism():
    rng = np.random.default_rng(5)
    cdf = random_cdf(rng, 32)
    symbols = rng.integers(0, 32, size=1000)
    a = range_encode(symbols, [cdf] * 1000)
    b = range_encode(symbols, [cdf] * 1000)
    assert a == b


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_round_trip_property(data):
    n_symbols = data.draw(st.integers(2, 40))
    length = data.draw(st.integers(0, 200))
    seed = data.draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    cdfs = [random_cdf(rng, n_symbols) for _ in range(length)]
    symbols = [int(rng.integers(0, n_symbols)) for _ in range(length)]
    payload = range_encode(symbols, cdfs)
    it = iter(cdfs)
    decoded = range_decode(payload, lambda prev: next(it), length)
    assert decoded == symbols


class TestQuantizePmf:
    def test_valid_rows(self):
        rng = np.random.default_rng(6)
        pmf = rng.dirichlet(np.ones(128), size=50)
        cdfs = quantize_pmf(pmf)
        assert cdfs.shape == (50, 129)
        assert np.all(cdfs[:, 0] == 0)
        assert np.all(cdfs[:, -1] == TOTAL)
        assert np.all(np.diff(cdfs, axis=1) >= 1)

    def test_one_unit_reserved_for_zero_mass(self):
        pmf = np.zeros(16)
        pmf[3] = 1.0
        cdf = quantize_pmf(pmf)
        freqs = np.diff(cdf)
        assert freqs[3] == TOTAL - 15
        assert np.all(freqs >= 1)

    def test_matches_pmf_for_exact_frequencies(self):
        pmf = np.array([0.25, 0.25, 0.5])
        cdf = quantize_pmf(pmf)
        assert list(np.diff(cdf)) == [TOTAL // 4, TOTAL // 4, TOTAL // 2]
