import pytest
import torch

from glc.bitstream import unpack_bitstream
from glc.codec import (
    ChecksumError,
    CheckpointMismatchError,
    GLCModel,
    compressed_bpp,
    decode_image,
    encode_image,
    load_checkpoint,
    model_hash,
    save_checkpoint,
)
from glc.config import toy_config
from glc.rangecoder import CoderError


class TestRoundTrip:
    def test_code_recovered_bit_exactly(self, toy_model):
        torch.manual_seed(0)
        img = torch.rand(32, 32, 3)
        blob, enc_dbg = encode_image(toy_model, img, q=1, return_debug=True)
        out, dec_dbg = decode_image(toy_model, blob, return_debug=True)
        assert torch.equal(enc_dbg["y_hat"], dec_dbg["y_hat"])
        assert out.shape == (32, 32, 3)

    def test_decode_deterministic(self, toy_model):
        img = torch.rand(32, 32, 3)
        blob = encode_image(toy_model, img, q=0)
        a = decode_image(toy_model, blob)
        b = decode_image(toy_model, blob)
        assert torch.equal(a, b)

    def test_encode_deterministic(self, toy_model):
        img = torch.rand(32, 32, 3)
        assert encode_image(toy_model, img, q=2) == encode_image(toy_model, img, q=2)

    def test_non_divisible_size_round_trips(self, toy_model):
        img = torch.rand(33, 31, 3)
        blob = encode_image(toy_model, img, q=3)
        out = decode_image(toy_model, blob)
        assert out.shape == (33, 31, 3)

    def test_all_rate_indices(self, toy_model):
        img = torch.rand(32, 32, 3)
        for q in range(4):
            blob, dbg = encode_image(toy_model, img, q=q, return_debug=True)
            _, dec = decode_image(toy_model, blob, return_debug=True)
            assert torch.equal(dbg["y_hat"], dec["y_hat"])
            assert unpack_bitstream(blob).header.rate_index == q

    def test_reported_bpp_matches_file_size(self, toy_model):
        img = torch.rand(32, 32, 3)
        blob = encode_image(toy_model, img, q=1)
        assert compressed_bpp(blob, 32, 32) == 8.0 * len(blob) / (32 * 32)


class TestIntegrity:
    def test_tampered_payload_detected(self, toy_model):
        img = torch.rand(32, 32, 3)
        blob = bytearray(encode_image(toy_model, img, q=1))
        blob[-3] ^= 0x55  # flip bits inside the range-coded payload
        with pytest.raises((ChecksumError, CoderError)):
            decode_image(toy_model, bytes(blob))

    def test_checkpoint_mismatch_names_both_hashes(self, toy_model):
        img = torch.rand(32, 32, 3)
        blob = encode_image(toy_model, img, q=1)
        torch.manual_seed(99)
        other = GLCModel(toy_config()).eval()
        with pytest.raises(CheckpointMismatchError) as exc:
            decode_image(other, blob)
        msg = str(exc.value)
        assert model_hash(toy_model).hex() in msg
        assert model_hash(other).hex() in msg

    def test_hash_ignores_encoder_side(self, toy_model):
        before = model_hash(toy_model)
        with torch.no_grad():
            toy_model.encoder.stem.weight.add_(1.0)
        assert model_hash(toy_model) == before
        with torch.no_grad():
            toy_model.decoder.stem.weight.add_(1.0)
        assert model_hash(toy_model) != before


class TestCheckpoints:
    def test_save_load_round_trip(self, tmp_path, toy_model):
        path = tmp_path / "model.pt"
        save_checkpoint(path, toy_model, stage="I", metadata={"note": "test"})
        loaded, ckpt = load_checkpoint(path)
        assert ckpt["stage"] == "I"
        assert ckpt["metadata"]["note"] == "test"
        img = torch.rand(32, 32, 3)
        assert encode_image(loaded, img, q=1) == encode_image(toy_model, img, q=1)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.pt"
        torch.save({"weights": 1}, path)
        with pytest.raises(Exception):
            load_checkpoint(path)


def test_support_widens_for_extreme_codes(toy_model):
    # force huge code values through the scaler to push past the default support
    with torch.no_grad():
        toy_model.rate_scaler.log_q_enc[1].fill_(6.0)  # e^6 ~ 403x
    img = torch.rand(32, 32, 3)
    blob, dbg = encode_image(toy_model, img, q=1, return_debug=True)
    header = unpack_bitstream(blob).header
    lo, hi = header.support_lo, header.support_hi
    assert lo <= int(dbg["y_hat"].min()) and hi >= int(dbg["y_hat"].max())
    _, dec = decode_image(toy_model, blob, return_debug=True)
    assert torch.equal(dbg["y_hat"], dec["y_hat"])
