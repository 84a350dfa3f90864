import pytest
import torch

from pugan.blocks import init_weights
from pugan.discriminators import PatchDiscriminator, PatchScores, build_dual
from pugan.errors import ShapeError


def rand(shape, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=gen)


@pytest.fixture
def dual():
    torch.manual_seed(1)
    d1, d2 = build_dual()
    return init_weights(d1), init_weights(d2)


class TestGeometry:
    def test_256_input_gives_16x16_patch_grid(self, dual):
        d1, d2 = dual
        scores = d1(rand((1, 3, 256, 256), seed=2))
        assert scores.data.shape == (1, 1, 16, 16)
        with_depth = d2(rand((1, 3, 256, 256), seed=3), rand((1, 1, 256, 256), seed=4))
        assert with_depth.data.shape == (1, 1, 16, 16)

    @pytest.mark.parametrize("size,expected", [(256, 16), (64, 4), (32, 2), (16, 1)])
    def test_grid_is_h_over_16(self, dual, size, expected):
        d1, _ = dual
        assert d1(rand((1, 3, size, size), seed=5)).data.shape[-1] == expected

    @pytest.mark.parametrize("size,expected", [(8, 1), (40, 3), (100, 7)])
    def test_odd_sizes_pad_to_ceil(self, dual, size, expected):
        d1, _ = dual
        assert d1(rand((1, 3, size, size), seed=6)).data.shape[-1] == expected

    def test_scores_in_unit_interval(self, dual):
        d1, _ = dual
        scores = d1(rand((2, 3, 64, 64), seed=7))
        assert torch.all((scores.data >= 0) & (scores.data <= 1))

    def test_rejects_bad_channel_count(self, dual):
        d1, d2 = dual
        with pytest.raises(ShapeError):
            d1(rand((1, 4, 64, 64), seed=8))
        with pytest.raises(ShapeError):
            d2(rand((1, 3, 64, 64), seed=9))  # depth channel missing

    def test_depth_shape_must_align(self, dual):
        _, d2 = dual
        with pytest.raises(ShapeError):
            d2(rand((1, 3, 64, 64), seed=10), rand((1, 1, 32, 32), seed=11))


class TestBehavior:
    def test_no_shared_parameters(self, dual):
        d1, d2 = dual
        ids1 = {id(p) for p in d1.parameters()}
        ids2 = {id(p) for p in d2.parameters()}
        assert ids1.isdisjoint(ids2)

    def test_deterministic_in_eval_mode(self, dual):
        d1, _ = dual
        d1.eval()
        x = rand((2, 3, 64, 64), seed=12)
        assert torch.equal(d1(x).data, d1(x).data)

    def test_depth_channel_is_not_ignored(self, dual):
        _, d2 = dual
        d2.eval()
        x = rand((4, 3, 64, 64), seed=13)
        depth = rand((4, 1, 64, 64), seed=14)
        shuffled = depth[:, :, torch.randperm(64, generator=torch.Generator().manual_seed(15))]
        with torch.no_grad():
            delta = (d2(x, depth).data - d2(x, shuffled).data).abs().mean()
        assert float(delta) > 0

    def test_mean_is_scalar_response(self):
        data = torch.tensor([[[[0.2, 0.4]]], [[[0.6, 0.8]]]])
        scores = PatchScores(data)
        assert torch.allclose(scores.responses, torch.tensor([0.3, 0.7]))
        assert float(scores.mean) == pytest.approx(0.5)

    def test_relu_variant_constructs(self):
        d = PatchDiscriminator(3, activation="relu")
        assert d(rand((1, 3, 32, 32), seed=16)).data.shape == (1, 1, 2, 2)
        with pytest.raises(ValueError):
            PatchDiscriminator(3, activation="gelu")
