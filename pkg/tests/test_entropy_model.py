import math

import numpy as np
import pytest
import torch
from scipy.stats import norm

from glc.entropy_model import (
    EntropyParameters,
    NUM_STEPS,
    build_quadtree_plan,
    estimate_rate,
    hyper_analysis,
    hyper_quantize,
    hyper_synthesis,
    noisy_rate_bits,
    predict_params,
    symbol_pmf,
)
from glc.rangecoder import PROB_FLOOR


class TestHyperBranch:
    def test_analysis_halves_resolution(self, toy_model):
        z = hyper_analysis(torch.randn(16, 16, 8), toy_model)
        assert z.shape == (8, 8, 8)
        z_odd = hyper_analysis(torch.randn(15, 15, 8), toy_model)
        assert z_odd.shape == (8, 8, 8)

    def test_analysis_deterministic_and_pure(self, toy_model):
        y = torch.randn(8, 8, 8)
        assert torch.equal(hyper_analysis(y, toy_model), hyper_analysis(y, toy_model))
        assert torch.equal(hyper_analysis(y.clone(), toy_model),
                           hyper_analysis(y, toy_model))

    def test_quantize_exact_entry(self, toy_model):
        cb = toy_model.hyper_codebook.codebook.detach()
        z = torch.zeros(2, 2, cb.shape[1])
        z[1, 1] = cb[5]
        _, idx = hyper_quantize(z, cb)
        assert idx[1, 1] == 5

    def test_quantize_idempotent(self, toy_model):
        cb = toy_model.hyper_codebook.codebook.detach()
        z = torch.randn(4, 4, cb.shape[1])
        zq, idx = hyper_quantize(z, cb)
        zq2, idx2 = hyper_quantize(zq, cb)
        assert torch.equal(zq, zq2)
        assert torch.equal(idx, idx2)

    def test_quantize_matches_exhaustive_scan(self):
        rng = np.random.default_rng(0)
        cb = torch.from_numpy(rng.normal(size=(32, 6))).float()
        for _ in range(20):
            z = torch.from_numpy(rng.normal(size=(4, 4, 6))).float()
            _, idx = hyper_quantize(z, cb)
            flat = z.reshape(-1, 6).numpy().astype(np.float64)
            oracle = np.array([
                int(np.argmin(((cb.numpy().astype(np.float64) - v) ** 2).sum(1)))
                for v in flat
            ])
            assert np.array_equal(idx.reshape(-1).numpy(), oracle)

    def test_synthesis_shape(self, toy_model):
        zq = torch.randn(8, 8, 8)
        prior = hyper_synthesis(zq, toy_model, (16, 16))
        assert prior.shape == (16, 16, 16)  # context width is 2N
        prior_odd = hyper_synthesis(zq, toy_model, (15, 16))
        assert prior_odd.shape == (15, 16, 16)

    def test_synthesis_deterministic(self, toy_model):
        zq = torch.randn(4, 4, 8)
        assert torch.equal(hyper_synthesis(zq, toy_model, (8, 8)),
                           hyper_synthesis(zq, toy_model, (8, 8)))

    def test_synthesis_footprint(self, toy_model):
        # one hyper cell feeds at most a 4x4 block: kernel 4, stride 2, pad 1
        # maps input i to outputs [2i-1, 2i+2]
        torch.manual_seed(0)
        zq = torch.randn(6, 6, 8)
        base = hyper_synthesis(zq, toy_model, (12, 12))
        zq2 = zq.clone()
        i, j = 3, 2
        zq2[i, j] += 1.0
        out = hyper_synthesis(zq2, toy_model, (12, 12))
        changed = (out - base).abs().sum(dim=2) > 1e-9
        rows = torch.arange(12)
        row_ok = (rows >= 2 * i - 1) & (rows <= 2 * i + 2)
        col_ok = (rows >= 2 * j - 1) & (rows <= 2 * j + 2)
        allowed = row_ok[:, None] & col_ok[None, :]
        assert not (changed & ~allowed).any()
        assert changed.any()


class TestQuadtreePlan:
    def test_2x2(self):
        plan = build_quadtree_plan(2, 2)
        assert [len(g) for g in plan.groups] == [1, 1, 1, 1]

    def test_16x16(self):
        plan = build_quadtree_plan(16, 16)
        assert [len(g) for g in plan.groups] == [64, 64, 64, 64]
        seen = set()
        for g in plan.groups:
            for r, c in g:
                assert (r, c) not in seen
                seen.add((r, c))
        assert len(seen) == 256

    def test_3x3_order(self):
        # mod-2 rule: (0,0) picks 4 cells, (1,1) one, (0,1) and (1,0) two each
        plan = build_quadtree_plan(3, 3)
        assert [len(g) for g in plan.groups] == [4, 1, 2, 2]
        union = np.concatenate(plan.groups)
        assert len(np.unique(union, axis=0)) == 9

    def test_partition_property_random_sizes(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            h, w = int(rng.integers(1, 40)), int(rng.integers(1, 40))
            plan = build_quadtree_plan(h, w)
            cells = np.concatenate(plan.groups)
            assert len(cells) == h * w
            assert len(np.unique(cells, axis=0)) == h * w

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            build_quadtree_plan(0, 5)


class TestPredictParams:
    def _setup(self, toy_model, h=8, w=8):
        torch.manual_seed(2)
        plan = build_quadtree_plan(h, w)
        prior = torch.randn(h, w, 16)
        y_hat = torch.round(torch.randn(h, w, 8) * 3)
        return plan, prior, y_hat

    def test_step0_ignores_partial(self, toy_model):
        # at step 0 everything is masked: any decoded_partial gives the same output
        plan, prior, y_hat = self._setup(toy_model)
        a = predict_params(toy_model, prior, torch.zeros_like(y_hat), plan, 0)
        b = predict_params(toy_model, prior, torch.randn_like(y_hat), plan, 0)
        assert torch.equal(a.mean, b.mean)
        assert torch.equal(a.scale, b.scale)

    def test_causality_masked_perturbation(self, toy_model):
        # perturbing any position in a group >= step leaves the output unchanged
        plan, prior, y_hat = self._setup(toy_model)
        for step in range(NUM_STEPS):
            partial = y_hat * plan.prefix_mask(step)[:, :, None]
            base = predict_params(toy_model, prior, partial, plan, step)
            for future_step in range(step, NUM_STEPS):
                tampered = partial.clone()
                r, c = plan.groups[future_step][0]
                tampered[r, c] += 7.0
                out = predict_params(toy_model, prior, tampered, plan, step)
                assert torch.equal(base.mean, out.mean)
                assert torch.equal(base.scale, out.scale)

    def test_earlier_groups_do_influence(self, toy_model):
        # step 2 output responds to a change in a group-0 position
        plan, prior, y_hat = self._setup(toy_model)
        partial = y_hat * plan.prefix_mask(2)[:, :, None]
        base = predict_params(toy_model, prior, partial, plan, 2)
        moved = partial.clone()
        r, c = plan.groups[0][0]
        moved[r, c] += 7.0
        out = predict_params(toy_model, prior, moved, plan, 2)
        assert not torch.allclose(base.mean, out.mean)

    def test_scale_floor(self, toy_model):
        plan, prior, y_hat = self._setup(toy_model)
        for step in range(NUM_STEPS):
            p = predict_params(toy_model, prior,
                               y_hat * plan.prefix_mask(step)[:, :, None], plan, step)
            assert (p.scale >= 0.04).all()
            assert p.mean.shape == (len(plan.groups[step]), 8)

    def test_step_out_of_range(self, toy_model):
        plan, prior, y_hat = self._setup(toy_model)
        with pytest.raises(ValueError):
            predict_params(toy_model, prior, torch.zeros_like(y_hat), plan, 4)


class TestSymbolPmf:
    def test_standard_gaussian_center(self):
        p = symbol_pmf(torch.zeros(1), torch.ones(1), (-8, 8))[0]
        expected = norm.cdf(0.5) - norm.cdf(-0.5)  # 0.38292
        assert abs(p[8] - expected) < 1e-4
        assert abs(p[8] - 0.3829) < 1e-3
        # symmetry
        np.testing.assert_allclose(p, p[::-1], rtol=1e-10)

    def test_near_deterministic_mass(self):
        # with a 17-symbol support and the 2**-16 floor, the center can hold
        # at most 1 - 16*2**-16 of the mass
        p = symbol_pmf(torch.zeros(1), torch.full((1,), 0.04), (-8, 8))[0]
        assert abs(p[8] - (1.0 - 16 * PROB_FLOOR)) < 1e-9
        assert np.all(p >= PROB_FLOOR)

    def test_floor_and_sum_contract(self):
        rng = np.random.default_rng(3)
        mean = torch.from_numpy(rng.normal(scale=5, size=(40,)))
        scale = torch.from_numpy(np.abs(rng.normal(scale=2, size=(40,))) + 0.04)
        p = symbol_pmf(mean, scale, (-64, 63))
        assert p.shape == (40, 128)
        assert np.all(p >= PROB_FLOOR)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_degenerate_support(self):
        with pytest.raises(ValueError):
            symbol_pmf(torch.zeros(1), torch.ones(1), (5, 5))


class TestEstimateRate:
    def test_single_standard_symbol(self):
        params = EntropyParameters(mean=torch.zeros(1, 1), scale=torch.ones(1, 1))
        r = estimate_rate(torch.zeros(1, 1), params, (-8, 8), 0, 64)
        assert abs(r["y_bits"] - 1.385) < 0.01

    def test_near_deterministic_cost(self):
        # all symbols equal the mean at the scale floor: per-symbol cost is
        # -log2(1 - 16*2**-16), about 3.5e-4 bits
        n = 100
        params = EntropyParameters(mean=torch.zeros(n), scale=torch.full((n,), 0.04))
        r = estimate_rate(torch.zeros(n), params, (-8, 8), 0, 64)
        per_symbol = r["y_bits"] / n
        expected = -math.log2(1.0 - 16 * PROB_FLOOR)
        assert abs(per_symbol - expected) < 1e-9
        assert per_symbol <= 5e-4

    def test_hyper_cost_exact(self):
        params = EntropyParameters(mean=torch.zeros(1), scale=torch.ones(1))
        r = estimate_rate(torch.zeros(1), params, (-8, 8), 16 * 16, 1024)
        assert r["hyper_bits"] == 2560.0

    def test_matches_ideal_codelength_identity(self):
        # same pmf, pure arithmetic identity within 1e-9 relative
        rng = np.random.default_rng(4)
        mean = torch.from_numpy(rng.normal(size=(50,)))
        scale = torch.from_numpy(np.abs(rng.normal(size=(50,))) + 0.1)
        y = torch.from_numpy(rng.integers(-5, 6, size=50).astype(np.float64))
        params = EntropyParameters(mean=mean, scale=scale)
        r = estimate_rate(y, params, (-8, 8), 0, 64)
        pmf = symbol_pmf(mean, scale, (-8, 8))
        oracle = 0.0
        for i in range(50):
            oracle += -math.log2(pmf[i, int(y[i]) + 8])
        assert abs(r["y_bits"] - oracle) <= 1e-9 * abs(oracle)

    def test_auto_widen_support(self):
        params = EntropyParameters(mean=torch.zeros(2), scale=torch.ones(2))
        r = estimate_rate(torch.tensor([100.0, -80.0]), params, (-64, 63), 0, 64)
        assert r["support"] == (-80, 100)
        assert np.isfinite(r["y_bits"])

    def test_rejects_non_integer(self):
        params = EntropyParameters(mean=torch.zeros(1), scale=torch.ones(1))
        with pytest.raises(ValueError):
            estimate_rate(torch.tensor([0.5]), params, (-8, 8), 0, 64)

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        params = EntropyParameters(
            mean=torch.from_numpy(rng.normal(size=(20,))),
            scale=torch.from_numpy(np.abs(rng.normal(size=(20,))) + 0.04))
        y = torch.from_numpy(rng.integers(-3, 4, size=20).astype(np.float64))
        r = estimate_rate(y, params, (-64, 63), 4, 64)
        assert r["y_bits"] >= 0
        assert r["total_bits"] == r["y_bits"] + r["hyper_bits"]


def test_noisy_rate_is_differentiable():
    mean = torch.zeros(10, requires_grad=True)
    scale = torch.ones(10, requires_grad=True)
    y = torch.randn(10)
    bits = noisy_rate_bits(y, mean, scale)
    bits.backward()
    assert mean.grad is not None and torch.isfinite(mean.grad).all()
    assert scale.grad is not None and torch.isfinite(scale.grad).all()
