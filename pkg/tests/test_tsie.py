import pytest
import torch

from pugan.blocks import init_weights, init_weights_fan_in
from pugan.errors import ShapeError
from pugan.par_subnet import ParOutputs
from pugan.tsie import (
    DegradationQuantizer,
    Decoder,
    Encoder,
    Generator,
    apply_weights,
    minmax_normalize,
    threshold_mask,
    transmission_mask,
)

from oracles import check_gradients

WIDTHS = (32, 64, 128, 256, 512)
TOY_WIDTHS = (4, 8, 16, 32, 64)


def rand(shape, seed=0, dtype=torch.float32, lo=0.0, hi=1.0):
    gen = torch.Generator().manual_seed(seed)
    return lo + (hi - lo) * torch.rand(*shape, generator=gen, dtype=dtype)


class TestEncoder:
    def test_pyramid_sizes_and_widths(self):
        torch.manual_seed(0)
        enc = init_weights(Encoder(WIDTHS))
        levels = enc(rand((1, 3, 256, 256), seed=1))
        assert [f.shape[-1] for f in levels] == [128, 64, 32, 16, 8]
        assert [f.shape[1] for f in levels] == list(WIDTHS)

    def test_rejects_indivisible_size(self):
        enc = Encoder(TOY_WIDTHS)
        with pytest.raises(ShapeError, match="32"):
            enc(torch.rand(1, 3, 48, 48))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(2)
        enc = init_weights_fan_in(Encoder(TOY_WIDTHS)).double().eval()
        x = rand((1, 3, 32, 32), seed=3, dtype=torch.float64)
        # fixed random projections keep the scalar output O(1), which keeps
        # the finite-difference cancellation error well below the tolerance
        probes = [rand(s, seed=40 + k, dtype=torch.float64, lo=-1.0)
                  for k, s in enumerate([(1, w, 32 >> k, 32 >> k)
                                         for k, w in enumerate(TOY_WIDTHS, start=1)])]

        def fn():
            levels = enc(x)
            return sum((lvl * p).mean() for lvl, p in zip(levels, probes))

        check_gradients(fn, list(enc.parameters()), n_samples=50, seed=4)


class TestThresholdMask:
    def test_analytic_threshold(self):
        f = torch.tensor([0.6, 0.8])
        out = threshold_mask(f, 0.7)
        assert torch.equal(out, torch.tensor([0.0, 0.8]))

    def test_below_threshold_contributes_zero(self):
        f = rand((2, 3, 4, 4), seed=5, hi=0.69)
        assert torch.equal(threshold_mask(f, 0.7), torch.zeros_like(f))

    def test_masked_positions_have_exactly_zero_gradient(self):
        f = torch.tensor([0.2, 0.5, 0.8, 0.9], requires_grad=True)
        threshold_mask(f, 0.7).sum().backward()
        assert torch.equal(f.grad, torch.tensor([0.0, 0.0, 1.0, 1.0]))


class TestDifferenceMask:
    def test_identical_streams_give_zero(self):
        torch.manual_seed(6)
        dq = init_weights(DegradationQuantizer(8, alpha=0.7))
        e = rand((2, 8, 16, 16), seed=7)
        for train in (True, False):
            dq.train(train)
            assert torch.equal(dq.difference_mask(e, e), torch.zeros_like(e))

    def test_normalization_bounds(self):
        torch.manual_seed(8)
        dq = init_weights(DegradationQuantizer(4, alpha=0.7)).eval()
        out = dq.difference_mask(rand((1, 4, 8, 8), seed=9), rand((1, 4, 8, 8), seed=10))
        assert torch.all((out >= 0) & (out <= 1))

    def test_shape_mismatch(self):
        dq = DegradationQuantizer(4, alpha=0.7)
        with pytest.raises(ShapeError):
            dq.difference_mask(torch.rand(1, 4, 8, 8), torch.rand(1, 4, 8, 9))

    def test_minmax_normalize_per_channel(self):
        x = torch.tensor([[[[1.0, 2.0], [3.0, 5.0]], [[0.0, 0.0], [0.0, 0.0]]]])
        out = minmax_normalize(x)
        assert float(out[0, 0].min()) == 0.0
        assert float(out[0, 0].max()) == pytest.approx(1.0, abs=1e-6)
        assert torch.equal(out[0, 1], torch.zeros(2, 2))  # constant plane maps to 0


class TestTransmissionMask:
    def test_perfect_transmission_no_mask(self):
        t = torch.ones(1, 3, 32, 32)
        for level in range(1, 6):
            assert torch.equal(transmission_mask(t, level, 0.7),
                               torch.zeros(1, 1, 32 // 2**level, 32 // 2**level))

    def test_analytic_values(self):
        low = torch.full((1, 3, 32, 32), 0.2)
        assert torch.allclose(transmission_mask(low, 1, 0.7),
                              torch.full((1, 1, 16, 16), 0.8), atol=1e-6)
        mid = torch.full((1, 3, 32, 32), 0.4)
        assert torch.equal(transmission_mask(mid, 1, 0.7), torch.zeros(1, 1, 16, 16))

    def test_spatial_size_tracks_level(self):
        t = torch.rand(2, 3, 64, 64)
        for level in range(1, 6):
            assert transmission_mask(t, level, 0.7).shape == (2, 1, 64 >> level, 64 >> level)

    def test_monotone_in_transmission(self):
        t_hi = rand((1, 3, 16, 16), seed=11, lo=0.1, hi=0.9)
        t_lo = (t_hi - 0.2).clamp(min=0.0)
        m_lo = transmission_mask(t_lo, 1, 0.7)
        m_hi = transmission_mask(t_hi, 1, 0.7)
        assert torch.all(m_lo >= m_hi)

    def test_rejects_bad_level(self):
        with pytest.raises(ShapeError):
            transmission_mask(torch.rand(1, 3, 32, 32), 6, 0.7)


class TestApplyWeights:
    def test_zero_weight_identity(self):
        e = rand((2, 4, 8, 8), seed=12)
        assert torch.equal(apply_weights(e, torch.zeros_like(e)), e)

    def test_analytic(self):
        e = torch.ones(1, 2, 2, 2)
        out = apply_weights(e, torch.full_like(e, 0.5))
        assert torch.equal(out, torch.full_like(e, 1.5))

    def test_scalar_oracle(self):
        e = rand((1, 2, 3, 3), seed=13, dtype=torch.float64)
        w = rand((1, 2, 3, 3), seed=14, dtype=torch.float64)
        out = apply_weights(e, w)
        for c in range(2):
            for i in range(3):
                for j in range(3):
                    expect = float(e[0, c, i, j]) * (1.0 + float(w[0, c, i, j]))
                    assert abs(float(out[0, c, i, j]) - expect) < 1e-7


class TestDQWeights:
    def test_range_and_determinism(self):
        torch.manual_seed(15)
        dq = init_weights(DegradationQuantizer(8, alpha=0.7)).eval()
        dif = rand((1, 8, 8, 8), seed=16)
        t_mask = rand((1, 1, 8, 8), seed=17)
        w1, w2 = dq.weights(dif, t_mask), dq.weights(dif, t_mask)
        assert torch.all((w1 > 0) & (w1 < 1))
        assert torch.equal(w1, w2)

    def test_gradient_reaches_difference_conv_parameters(self):
        torch.manual_seed(18)
        dq = init_weights(DegradationQuantizer(4, alpha=0.3)).double().eval()
        e_t = rand((1, 4, 8, 8), seed=19, dtype=torch.float64)
        e_m = rand((1, 4, 8, 8), seed=20, dtype=torch.float64)
        t_mask = rand((1, 1, 8, 8), seed=21, dtype=torch.float64)
        dq.weights(dq.difference_mask(e_t, e_m), t_mask).sum().backward()
        conv_weight = dq.diff_transform.conv.weight
        assert conv_weight.grad is not None
        assert float(conv_weight.grad.abs().sum()) > 0


class TestDecoder:
    def _pyramid(self, widths, size=32, seed=22):
        return [
            rand((1, w, size >> k, size >> k), seed=seed + k)
            for k, w in enumerate(widths, start=1)
        ]

    def test_output_shape_and_range(self):
        torch.manual_seed(23)
        dec = init_weights(Decoder(TOY_WIDTHS)).eval()
        out = dec(self._pyramid(TOY_WIDTHS, size=64))
        assert out.shape == (1, 3, 64, 64)
        assert torch.all((out > 0) & (out < 1))

    def test_rejects_malformed_pyramid(self):
        dec = Decoder(TOY_WIDTHS)
        with pytest.raises(ShapeError, match="levels"):
            dec(self._pyramid(TOY_WIDTHS)[:4])
        bad_width = self._pyramid(TOY_WIDTHS)
        bad_width[2] = torch.rand(1, 99, 8, 8)
        with pytest.raises(ShapeError, match="channels"):
            dec(bad_width)

    def test_encode_decode_gradient_matches_finite_differences(self):
        torch.manual_seed(24)
        enc = init_weights_fan_in(Encoder(TOY_WIDTHS)).double().eval()
        dec = init_weights_fan_in(Decoder(TOY_WIDTHS)).double().eval()
        x = rand((1, 3, 32, 32), seed=25, dtype=torch.float64)
        probe = rand((1, 3, 32, 32), seed=41, dtype=torch.float64, lo=-1.0)

        def fn():
            return (dec(enc(x)) * probe).mean()

        params = list(enc.parameters()) + list(dec.parameters())
        check_gradients(fn, params, n_samples=50, seed=26)


class TestGenerator:
    def _inputs(self, size=64, seed=27, alpha=0.7):
        torch.manual_seed(seed)
        gen = init_weights(Generator(TOY_WIDTHS, dq_alpha=alpha))
        image = rand((2, 3, size, size), seed=seed + 1)
        t = rand((2, 3, size, size), seed=seed + 2, lo=0.1, hi=0.95)
        j_prime = (image / t.clamp(min=0.1)).clamp(0, 1)
        par_out = ParOutputs(
            beta=torch.ones(2, 3), d1=torch.rand(2, 1, size, size), t=t,
            d2=torch.rand(2, 1, size, size), j_prime=j_prime,
        )
        return gen, image, par_out

    def test_end_to_end_shape_and_range(self):
        gen, image, par_out = self._inputs()
        out = gen(image, par_out)
        assert out.shape == (2, 3, 64, 64)
        assert torch.all((out > 0) & (out < 1))
        assert torch.isfinite(out).all()

    def test_eval_mode_bitwise_deterministic(self):
        gen, image, par_out = self._inputs(seed=30)
        gen.eval()
        assert torch.equal(gen(image, par_out), gen(image, par_out))

    def test_decoder_handles_unweighted_pyramid(self):
        # all DQ weights zeroed: the residual path alone must stay finite and
        # in range ([0, 1] closed: float32 sigmoid can round to the endpoints)
        gen, image, par_out = self._inputs(seed=33)
        gen.eval()
        levels = gen.top_encoder(image)
        out = gen.decoder([apply_weights(e, torch.zeros_like(e)) for e in levels])
        assert torch.isfinite(out).all()
        assert torch.all((out >= 0) & (out <= 1))
