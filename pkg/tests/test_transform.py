import pytest
import torch

from glc.transform import RateIndexError, quantize, analysis, synthesis


class TestQuantize:
    def test_round_examples(self):
        out = quantize(torch.tensor([1.4, -2.6, 0.5]), "round")
        assert torch.equal(out, torch.tensor([1.0, -3.0, 0.0]))

    def test_round_ties_to_even(self):
        out = quantize(torch.tensor([0.5, 1.5, 2.5, -0.5, -1.5]), "round")
        assert torch.equal(out, torch.tensor([0.0, 2.0, 2.0, -0.0, -2.0]))

    def test_round_error_bounded(self):
        torch.manual_seed(0)
        x = torch.randn(100_000) * 50
        err = (quantize(x, "round") - x).abs()
        assert err.max() <= 0.5

    def test_integer_fixed_point(self):
        x = torch.arange(-5, 6, dtype=torch.float32)
        assert torch.equal(quantize(x, "round"), x)

    def test_noise_statistics(self):
        torch.manual_seed(1)
        x = torch.zeros(1_000_000)
        d = (quantize(x, "noise") - x).abs()
        assert d.max() <= 0.5
        assert abs(d.mean().item() - 0.25) <= 0.01

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            quantize(torch.zeros(3), "floor")


class TestTransforms:
    def test_analysis_shape_and_finite(self, toy_model):
        lat = torch.randn(8, 8, 8)
        code = analysis(lat, toy_model, q=0)
        assert code.shape == (8, 8, 8)
        assert torch.isfinite(code).all()

    def test_rate_scaling_ratio(self, toy_model):
        # codes at two rate indices differ exactly by the enc-scale ratio
        lat = torch.randn(8, 8, 8)
        code0, pre = analysis(lat, toy_model, q=0, return_prescale=True)
        code3 = analysis(lat, toy_model, q=3)
        s0 = toy_model.rate_scaler.enc_scale(0)[0, :, 0, 0]
        s3 = toy_model.rate_scaler.enc_scale(3)[0, :, 0, 0]
        assert torch.allclose(code0, pre * s0, atol=1e-6)
        assert torch.allclose(code3, pre * s3, atol=1e-6)

    def test_zero_latent_deterministic(self, toy_model):
        lat = torch.zeros(8, 8, 8)
        a = analysis(lat, toy_model, q=1)
        b = analysis(lat, toy_model, q=1)
        assert torch.equal(a, b)

    def test_synthesis_shape(self, toy_model):
        lat = synthesis(torch.round(torch.randn(8, 8, 8) * 3), toy_model, q=2)
        assert lat.shape == (8, 8, 8)

    def test_synthesis_rejects_nan(self, toy_model):
        code = torch.randn(8, 8, 8)
        code[0, 0, 0] = float("nan")
        with pytest.raises(ValueError):
            synthesis(code, toy_model, q=0)

    def test_invalid_rate_index(self, toy_model):
        lat = torch.randn(8, 8, 8)
        with pytest.raises(RateIndexError):
            analysis(lat, toy_model, q=4)
        with pytest.raises(RateIndexError):
            synthesis(lat, toy_model, q=-1)

    def test_inference_path_deterministic(self, toy_model):
        lat = torch.randn(8, 8, 8)
        outs = []
        for _ in range(3):
            y = quantize(analysis(lat, toy_model, q=1), "round")
            outs.append(synthesis(y, toy_model, q=1))
        assert torch.equal(outs[0], outs[1])
        assert torch.equal(outs[1], outs[2])


class TestRateScaler:
    def test_positivity_survives_training(self, toy_model):
        scaler = toy_model.rate_scaler
        opt = torch.optim.SGD(scaler.parameters(), lr=10.0)
        for _ in range(20):
            opt.zero_grad()
            # push the log scales hard toward negative values
            loss = (scaler.enc_scale(0).sum() + scaler.dec_scale(3).sum())
            loss.backward()
            opt.step()
        for q in range(scaler.num_levels):
            assert (scaler.enc_scale(q) > 0).all()
            assert (scaler.dec_scale(q) > 0).all()

    def test_ladder_orders_quantization(self, toy_model):
        # higher rate index scales the code up, quantizing more finely
        s = [toy_model.rate_scaler.enc_scale(q).mean().item() for q in range(4)]
        assert s == sorted(s)
