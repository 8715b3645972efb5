import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pixel_shuffle_by_index, sine_encoding
from seatrans.errors import DivisibilityError, ShapeMismatchError
from seatrans.tensors import (
    flatten_to_tokens,
    pixel_shuffle,
    pixel_unshuffle,
    sine_positional_encoding,
    tokens_to_feature,
)


class TestFlatten:
    def test_row_major_order(self):
        fm = torch.arange(12.0).reshape(1, 2, 2, 3).permute(0, 3, 1, 2)  # (h, w, c) -> (c, h, w)
        tokens = flatten_to_tokens(fm)
        assert tokens.shape == (1, 4, 3)
        # token 1 is map position (row 0, col 1)
        assert torch.equal(tokens[0, 1], fm[0, :, 0, 1])
        assert torch.equal(tokens[0, 2], fm[0, :, 1, 0])

    def test_single_location(self):
        fm = torch.randn(1, 5, 1, 1)
        assert torch.equal(flatten_to_tokens(fm)[0, 0], fm[0, :, 0, 0])

    def test_inverse_on_example(self):
        fm = torch.arange(12.0).reshape(1, 3, 2, 2)
        assert torch.equal(tokens_to_feature(flatten_to_tokens(fm), 2, 2), fm)

    @pytest.mark.parametrize("h,w,c", [(4, 5, 2), (3, 7, 5)])
    def test_round_trip_random(self, h, w, c):
        fm = torch.randn(2, c, h, w)
        assert torch.equal(tokens_to_feature(flatten_to_tokens(fm), h, w), fm)
        tokens = torch.randn(2, h * w, c)
        assert torch.equal(flatten_to_tokens(tokens_to_feature(tokens, h, w)), tokens)

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            tokens_to_feature(torch.randn(1, 6, 3), 2, 2)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 3))
    def test_round_trip_property(self, h, w, c, b):
        fm = torch.randn(b, c, h, w)
        tokens = flatten_to_tokens(fm)
        assert tokens.shape == (b, h * w, c)
        assert torch.equal(tokens_to_feature(tokens, h, w), fm)


class TestPixelShuffle:
    def test_identity_factor(self):
        x = torch.randn(2, 6, 3, 4)
        assert torch.equal(pixel_shuffle(x, 1), x)

    def test_four_channels_to_two_by_two(self):
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        x = torch.tensor([a, b, c, d]).reshape(1, 4, 1, 1)
        # enumerating (h, w) in {0,1}^2: channel index = 2*h + w
        assert torch.equal(pixel_shuffle(x, 2)[0, 0], torch.tensor([[a, b], [c, d]]))

    def test_multiset_preserved(self):
        x = torch.randn(1, 8, 2, 2)
        out = pixel_shuffle(x, 2)
        assert out.shape == (1, 2, 4, 4)
        assert torch.equal(out.flatten().sort().values, x.flatten().sort().values)

    def test_matches_torch_reference(self):
        x = torch.randn(2, 32, 3, 5)
        assert torch.equal(pixel_shuffle(x, 4), torch.nn.functional.pixel_shuffle(x, 4))

    def test_divisibility(self):
        with pytest.raises(DivisibilityError):
            pixel_shuffle(torch.randn(1, 6, 2, 2), 2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([1, 2, 4]), st.integers(1, 4))
    def test_unshuffle_inverse(self, h, w, s, k):
        c = k * s * s
        x = torch.randn(1, c, h, w)
        assert torch.equal(pixel_unshuffle(pixel_shuffle(x, s), s), x)

    def test_index_formula_small(self):
        x = np.random.default_rng(0).normal(size=(1, 8, 2, 3))
        np.testing.assert_array_equal(
            pixel_shuffle(torch.from_numpy(x), 2).numpy(), pixel_shuffle_by_index(x, 2)
        )


class TestPositionalEncoding:
    def test_origin_is_sin_zero_cos_one(self):
        enc = sine_positional_encoding(3, 3, 16, dtype=torch.float64)
        assert torch.all(enc[0, 0::2] == 0.0)
        assert torch.all(enc[0, 1::2] == 1.0)

    def test_two_by_two_rows_distinct(self):
        enc = sine_positional_encoding(2, 2, 4, dtype=torch.float64).numpy()
        s1, c1 = np.sin(1.0), np.cos(1.0)
        expected = np.array(
            [[0, 1, 0, 1], [0, 1, s1, c1], [s1, c1, 0, 1], [s1, c1, s1, c1]], dtype=np.float64
        )
        np.testing.assert_allclose(enc, expected, atol=1e-15)
        assert len({tuple(r) for r in enc}) == 4

    def test_deterministic(self):
        a = sine_positional_encoding(5, 7, 32)
        b = sine_positional_encoding(5, 7, 32)
        assert torch.equal(a, b)

    def test_matches_closed_form(self):
        np.testing.assert_allclose(
            sine_positional_encoding(4, 3, 24, dtype=torch.float64).numpy(),
            sine_encoding(4, 3, 24),
            atol=1e-12,
        )

    def test_dim_must_divide_by_four(self):
        with pytest.raises(DivisibilityError):
            sine_positional_encoding(2, 2, 6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.sampled_from([4, 8, 16, 64]))
    def test_range_and_distinctness(self, h, w, d):
        enc = sine_positional_encoding(h, w, d, dtype=torch.float64)
        assert enc.shape == (h * w, d)
        assert enc.abs().max() <= 1.0
        assert len({tuple(r.tolist()) for r in enc}) == h * w
