import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timeformer import tensor as T
from timeformer.attention import hawkes_modulation
from timeformer.errors import ConfigurationError, DimensionError, ParseError
from timeformer.model import (
    VARIANTS,
    ModelConfig,
    PatchSet,
    build_variant,
    expected_parameter_count,
    load_checkpoint,
    multi_scale_sample,
    patch_geometry,
    save_checkpoint,
    segment,
)
from timeformer.nn import Conv1d, make_rng
from timeformer.tensor import Tensor, no_grad

from helpers import naive_conv1d


def small(**kw):
    base = dict(lookback=24, horizon=6, d_model=8, num_heads=2, ffn_hidden=16)
    base.update(kw)
    return ModelConfig(**base)


class TestSampling:
    def test_single_scale_is_identity(self, rng):
        x = Tensor(rng.standard_normal(10))
        out = multi_scale_sample(x, 1)
        assert len(out) == 1 and out[0] is x

    def test_scale_two(self):
        assert multi_scale_sample(Tensor([1.0, 2, 3, 4]), 2)[1].data.tolist() == [1.5, 3.5]

    def test_lengths(self):
        out = multi_scale_sample(Tensor(np.zeros(96)), 3)
        assert [o.shape[-1] for o in out] == [96 // s for s in (1, 2, 3)] == [96, 48, 32]

    def test_bad_scales(self):
        with pytest.raises(ConfigurationError):
            multi_scale_sample(Tensor(np.zeros(4)), 0)
        with pytest.raises(ConfigurationError):
            ModelConfig(lookback=2, num_scales=3)


class TestEmbedding:
    def test_identity_kernel(self, rng):
        conv = Conv1d(1, 1, 1, make_rng(0))
        conv.weight.data[:] = 1.0
        conv.bias.data[:] = 0.0
        x = rng.standard_normal((5, 1))
        np.testing.assert_array_equal(conv(Tensor(x)).data, x)

    def test_zero_input_gives_bias(self):
        conv = Conv1d(1, 4, 3, make_rng(0))
        out = conv(Tensor(np.zeros((6, 1)))).data
        np.testing.assert_array_equal(out, np.broadcast_to(conv.bias.data, (6, 4)))

    def test_matches_naive(self, rng):
        conv = Conv1d(1, 4, 3, make_rng(1))
        x = rng.standard_normal((7, 1))
        np.testing.assert_allclose(conv(Tensor(x)).data, naive_conv1d(x, conv.weight.data, conv.bias.data), atol=1e-12)


class TestSegmentation:
    @pytest.mark.parametrize("length,expected", [(96, (10, 10, 4)), (4, (2, 2, 0)), (1, (1, 1, 0))])
    def test_geometry(self, length, expected):
        assert patch_geometry(length) == expected
        k = math.ceil(math.sqrt(length))
        assert expected == (k, k, k * k - length)

    def test_perfect_square_patches(self, rng):
        x = rng.standard_normal((4, 3))
        ps = segment(Tensor(x))
        assert ps.pad_len == 0
        np.testing.assert_array_equal(ps.tensor.data, [[x[0], x[1]], [x[2], x[3]]])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 150))
    def test_front_padding_reconstructs(self, length):
        x = np.arange(1.0, length + 1)[:, None] * np.ones((1, 2))
        ps = segment(Tensor(x))
        flat = ps.tensor.data.reshape(-1, 2)
        assert np.all(flat[: ps.pad_len] == 0.0)
        np.testing.assert_array_equal(flat[ps.pad_len:], x)

    def test_zero_length(self):
        with pytest.raises(DimensionError):
            patch_geometry(0)


class TestForecast:
    def test_channel_independence(self, rng):
        model = build_variant(small())
        col = rng.standard_normal((24, 1))
        out = model.forecast(np.hstack([col, col]))
        assert out.shape == (6, 2)
        np.testing.assert_array_equal(out[:, 0], out[:, 1])

    def test_channel_permutation(self, rng):
        model = build_variant(small())
        x = rng.standard_normal((24, 3))
        perm = [2, 0, 1]
        np.testing.assert_allclose(model.forecast(x[:, perm]), model.forecast(x)[:, perm], atol=1e-12)

    def test_single_scale_without_sampling_stage(self, rng):
        x = rng.standard_normal((24, 2))
        a = build_variant(small(num_scales=1), seed=4).forecast(x)
        b = build_variant(small(num_scales=1, sampling=False), seed=4).forecast(x)
        assert np.array_equal(a, b)

    def test_single_scale_has_one_branch(self):
        model = build_variant(small(lookback=96))
        assert len(model.branches) == 1 and model.lengths == [96]

    def test_batch_rows_independent_in_eval(self, rng):
        model = build_variant(small())
        x = rng.standard_normal((3, 24, 2))
        batched = model.forecast(x)
        for i in range(3):
            np.testing.assert_allclose(model.forecast(x[i]), batched[i], atol=1e-12)

    @pytest.mark.parametrize("horizon", [24, 48, 96, 192, 336, 720])
    @pytest.mark.parametrize("channels", [1, 7, 21])
    def test_shape_sweep(self, horizon, channels):
        model = build_variant(ModelConfig(lookback=96, horizon=horizon, d_model=4, num_heads=1, ffn_hidden=8))
        assert model.forecast(np.zeros((96, channels))).shape == (horizon, channels)

    def test_input_errors(self):
        model = build_variant(small())
        with pytest.raises(DimensionError):
            model.forecast(np.zeros((24, 0)))
        with pytest.raises(DimensionError):
            model.forecast(np.zeros((23, 2)))

    def test_deterministic_construction(self, rng):
        x = rng.standard_normal((24, 3))
        a = build_variant(small(), seed=7).forecast(x)
        b = build_variant(small(), seed=7).forecast(x)
        c = build_variant(small(), seed=8).forecast(x)
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_identical_patches_identical_outputs(self):
        model = build_variant(small(lookback=16))
        branch = model.branches[0]
        patch = np.random.default_rng(0).standard_normal((1, 4, 8))
        x = Tensor(np.concatenate([patch, patch], axis=0).reshape(1, 2, 4, 8))
        model.eval()
        with no_grad():
            out = branch.intra_patch(PatchSet(x, 0)).data
        np.testing.assert_allclose(out[0, 0], out[0, 1], atol=1e-14)

    def test_inter_causal(self, rng):
        model = build_variant(small(lookback=16)).eval()
        block = model.branches[0].inter[0]
        h = rng.standard_normal((1, 4, 8))
        with no_grad():
            base = block(Tensor(h)).data
            h[0, 2:] += 5.0
            pert = block(Tensor(h)).data
        assert np.array_equal(base[0, :2], pert[0, :2])

    def test_large_gamma_concentrates_on_diagonal(self):
        om = np.tril(hawkes_modulation(4, 5.0))
        uniform = np.tril(np.ones((4, 4))) / np.arange(1, 5)[:, None]
        mass = uniform * om
        for i in range(1, 4):
            assert mass[i, i] / mass[i].sum() > 0.99


class TestVariants:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_parameter_count_closed_form(self, variant):
        cfg = small(variant=variant, num_scales=2)
        assert build_variant(cfg).num_parameters() == expected_parameter_count(cfg)

    def test_hand_count_default_width(self):
        cfg = ModelConfig(lookback=96, horizon=24, d_model=64)
        # conv 3*64+64, two blocks of 4*64^2+2*64, two FFNs 640->128->64, projection 64->24
        ffn = 640 * 128 + 128 + 128 * 64 + 64
        hand = (3 * 64 + 64) + 2 * (4 * 64 * 64 + 128) + 2 * ffn + (64 * 24 + 24)
        assert hand == 215448
        assert build_variant(cfg).num_parameters() == hand

    def test_vanilla_counts_match(self):
        a = build_variant(small(variant="vanilla_transformer"))
        b = build_variant(small(variant="vanilla_transformer_mosa"))
        assert a.num_parameters() == b.num_parameters()
        assert not a.blocks[0].config.causal and b.blocks[0].config.causal

    def test_standard_attention_blocks(self):
        model = build_variant(small(variant="standard_attention"))
        cfg = model.branches[0].intra[0].config
        assert not cfg.hawkes and not cfg.causal

    def test_no_segmentation_single_pass(self, rng):
        model = build_variant(small(variant="no_segmentation"))
        model.forecast(rng.standard_normal((24, 1)))
        assert model.branches[0].blocks[0].last_attention.shape[-1] == 24

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(variant="nope")


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        model = build_variant(small(num_scales=2), seed=3)
        path = tmp_path / "m.tfm"
        save_checkpoint(path, model, np.ones(2), np.full(2, 2.0), {"note": "x"})
        loaded, mean, std, header = load_checkpoint(path)
        x = rng.standard_normal((24, 2))
        assert np.array_equal(model.forecast(x), loaded.forecast(x))
        assert mean.tolist() == [1, 1] and std.tolist() == [2, 2]
        assert header["extra"] == {"note": "x"}

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "bad.tfm"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.tfm"
        save_checkpoint(path, build_variant(small()))
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ParseError):
            load_checkpoint(path)


def test_gradients_reach_every_parameter(rng):
    model = build_variant(small(num_scales=2))
    out = model(Tensor(rng.standard_normal((2, 24, 2))))
    T.mean(out * out).backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name
