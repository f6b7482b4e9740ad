import numpy as np
import pytest
import torch

from glc.applications import (
    encode_restorative,
    gaussian_noise,
    gram_matrix,
    load_app_checkpoint,
    make_noisy_pairs,
    save_app_checkpoint,
    style_loss,
    train_restoration_encoder,
    train_style_decoder,
)
from glc.bitstream import unpack_bitstream
from glc.codec import decode_image, encode_image, model_hash
from glc.data import synthetic_images
from glc.losses import RandomFeatureExtractor

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


@pytest.fixture(scope="module")
def clean_images():
    return synthetic_images(24, size=32, seed=100)


@pytest.fixture(scope="module")
def trained_restorer(clean_images):
    torch.manual_seed(0)
    from glc.codec import GLCModel
    from glc.config import toy_config

    model = GLCModel(toy_config()).eval()
    distorted, clean = make_noisy_pairs(clean_images, seed=1)
    restorer = train_restoration_encoder(distorted, clean, model, steps=120, seed=2)
    return model, restorer, distorted, clean


class TestRestoration:
    def test_output_shape_parity(self, trained_restorer):
        model, restorer, _, _ = trained_restorer
        x = torch.rand(2, 3, 32, 32)
        with torch.no_grad():
            assert restorer(x).shape == model.encoder(x).shape

    def test_zero_noise_pairs_stay_at_encoder_outputs(self, clean_images):
        # degenerate degradation: distorted == clean, so training keeps the
        # restorer at the stock encoder's latents
        torch.manual_seed(1)
        from glc.codec import GLCModel
        from glc.config import toy_config

        model = GLCModel(toy_config()).eval()
        restorer = train_restoration_encoder(clean_images, clean_images, model,
                                             steps=30, seed=5)
        x = torch.from_numpy(clean_images[:8]).permute(0, 3, 1, 2)
        with torch.no_grad():
            gap = float(((restorer(x) - model.encoder(x)) ** 2).mean())
            power = float((model.encoder(x) ** 2).mean())
        assert gap < 0.01 * power

    def test_latent_mse_beats_passthrough(self, trained_restorer):
        # oracle: applying the stock encoder to the noisy input directly
        model, restorer, distorted, clean = trained_restorer
        x_d = torch.from_numpy(distorted[:16]).permute(0, 3, 1, 2)
        x_c = torch.from_numpy(clean[:16]).permute(0, 3, 1, 2)
        with torch.no_grad():
            target = model.encoder(x_c)
            restored = restorer(x_d)
            passthrough = model.encoder(x_d)
        mse_restored = float(((restored - target) ** 2).mean())
        mse_passthrough = float(((passthrough - target) ** 2).mean())
        assert mse_restored < mse_passthrough

    def test_codec_weights_untouched(self, trained_restorer, clean_images):
        model, _, _, _ = trained_restorer
        before = model_hash(model)
        distorted, clean = make_noisy_pairs(clean_images, seed=3)
        train_restoration_encoder(distorted, clean, model, steps=5, seed=4)
        assert model_hash(model) == before

    def test_unpaired_data_rejected(self, trained_restorer):
        model, _, distorted, clean = trained_restorer
        with pytest.raises(ValueError, match="paired"):
            train_restoration_encoder(distorted[:5], clean[:4], model, steps=1)

    def test_stream_format_compatible(self, trained_restorer):
        model, restorer, distorted, _ = trained_restorer
        blob = encode_restorative(model, restorer, distorted[0], q=1)
        plain = encode_image(model, torch.from_numpy(distorted[0]), q=1)
        h_r = unpack_bitstream(blob).header
        h_p = unpack_bitstream(plain).header
        assert (h_r.orig_height, h_r.orig_width) == (h_p.orig_height, h_p.orig_width)
        assert len(h_r.extension) == len(h_p.extension)
        # stock decoder reads the restoration stream with no flag
        img = decode_image(model, blob)
        assert img.shape == (32, 32, 3)

    def test_bpp_no_extra_cost(self, trained_restorer):
        # restoration must not add rate: paired bpp within 10%
        model, restorer, distorted, clean = trained_restorer
        ratios = []
        for i in range(6):
            b_rest = encode_restorative(model, restorer, distorted[i], q=1)
            b_clean = encode_image(model, torch.from_numpy(clean[i]), q=1)
            ratios.append(len(b_rest) / len(b_clean))
        assert abs(np.mean(ratios) - 1.0) <= 0.10


class TestNoise:
    def test_sigma_statistics(self):
        rng = np.random.default_rng(5)
        img = np.full((128, 128, 3), 0.5, dtype=np.float32)
        noisy = gaussian_noise(rng, img)
        assert abs(float(np.std(noisy - img)) - 20.0 / 255.0) < 0.005
        assert noisy.min() >= 0.0 and noisy.max() <= 1.0


class TestStyle:
    def test_gram_identity_zero_style_loss(self):
        fx = RandomFeatureExtractor()
        img = torch.rand(1, 3, 32, 32)
        assert float(style_loss(fx, img, img.clone())) == 0.0

    def test_gram_shape(self):
        g = gram_matrix(torch.rand(2, 8, 4, 4))
        assert g.shape == (2, 8, 8)

    def test_zero_style_weight_converges_to_stock_decoder(self, clean_images):
        torch.manual_seed(6)
        from glc.codec import GLCModel
        from glc.config import toy_config

        model = GLCModel(toy_config()).eval()
        style_img = clean_images[0]

        def decoder_gap(decoder):
            x = torch.from_numpy(clean_images[:8]).permute(0, 3, 1, 2)
            with torch.no_grad():
                lat = model.encoder(x)
                q = model.config.num_rate_levels - 1
                y = torch.round(model.analysis(lat) * model.rate_scaler.enc_scale(q))
                lat_hat = model.synthesis(y * model.rate_scaler.dec_scale(q))
                return float(((decoder(lat_hat) - model.decoder(lat_hat)) ** 2).mean())

        early = train_style_decoder(style_img, clean_images, model, steps=5,
                                    style_weight=0.0, seed=7)
        late = train_style_decoder(style_img, clean_images, model, steps=150,
                                   style_weight=0.0, seed=7)
        assert decoder_gap(late) < decoder_gap(early)

    def test_style_decoder_output_dims(self, clean_images):
        torch.manual_seed(8)
        from glc.codec import GLCModel
        from glc.config import toy_config

        model = GLCModel(toy_config()).eval()
        decoder = train_style_decoder(clean_images[0], clean_images, model,
                                      steps=3, seed=9)
        img = torch.from_numpy(clean_images[1])
        blob = encode_image(model, img, q=0)
        stock = decode_image(model, blob)
        styled = decode_image(model, blob, decoder_override=decoder)
        assert styled.shape == stock.shape

    def test_missing_style_image(self, clean_images):
        from glc.codec import GLCModel
        from glc.config import toy_config

        model = GLCModel(toy_config()).eval()
        with pytest.raises(ValueError, match="style image"):
            train_style_decoder(None, clean_images, model, steps=1)


class TestAppCheckpoints:
    def test_round_trip(self, tmp_path, trained_restorer):
        model, restorer, distorted, _ = trained_restorer
        path = tmp_path / "rest.pt"
        save_app_checkpoint(path, restorer, "restoration", model.config)
        loaded = load_app_checkpoint(path, "restoration")
        x = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(loaded(x), restorer(x))

    def test_kind_mismatch(self, tmp_path, trained_restorer):
        model, restorer, _, _ = trained_restorer
        path = tmp_path / "rest.pt"
        save_app_checkpoint(path, restorer, "restoration", model.config)
        with pytest.raises(ValueError):
            load_app_checkpoint(path, "style")
