import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timeformer.data import (
    SPLIT_PRESETS,
    SeriesDataset,
    denormalize,
    load_csv,
    load_dataset,
    normalize,
    save_dataset,
    split,
    synthetic,
    window_count,
    window_starts,
    windows,
)
from timeformer.errors import ConfigurationError, ParseError

from helpers import etth1_path


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestCsv:
    def test_numeric(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,b\n1,2\n3,4\n5,6\n"))
        assert ds.values.shape == (3, 2)
        assert ds.column_names == ["a", "b"]

    def test_timestamp_dropped(self, tmp_path):
        ds = load_csv(write(tmp_path, "date,x,y\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,3,4\n"))
        assert ds.n_channels == 2 and ds.column_names == ["x", "y"]

    def test_ragged_row(self, tmp_path):
        with pytest.raises(ParseError, match="row 3"):
            load_csv(write(tmp_path, "a,b\n1,2\n3\n"))

    def test_non_numeric_cell(self, tmp_path):
        with pytest.raises(ParseError, match="row 2.*b"):
            load_csv(write(tmp_path, "a,b\n1,oops\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "absent.csv")

    def test_load_twice_identical(self, tmp_path):
        p = write(tmp_path, "a\n0.1\n0.2\n0.3\n")
        assert np.array_equal(load_csv(p).values, load_csv(p).values)

    def test_etth1_shape(self):
        path = etth1_path()
        if path is None:
            pytest.skip("ETTh1.csv not present (set TIMEFORMER_ETTH1_CSV)")
        ds = load_csv(path)
        assert ds.values.shape == (17420, 7)


class TestSplit:
    def test_ratios(self):
        assert [len(r) for r in split(100)] == [70, 10, 20]

    def test_presets_from_table(self):
        assert SPLIT_PRESETS["etth1"] == (8545, 2881, 2881)
        assert SPLIT_PRESETS["exchange"] == (5120, 665, 1422)
        tr, va, te = split(17420, preset="ETTh1")
        assert (tr.start, va.start, te.start, te.stop) == (0, 8545, 8545 + 2881, 8545 + 2 * 2881)

    def test_too_large(self):
        with pytest.raises(ConfigurationError):
            split(100, sizes=(80, 10, 20))
        with pytest.raises(ConfigurationError):
            split(10, preset="etth1")

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            split(100, preset="nope")


class TestNormalize:
    def test_train_stats_only(self):
        ds = SeriesDataset(np.array([1.0, 3.0, 100.0, -50.0]), ["x"], split_sizes=(2, 1, 1))
        out = normalize(ds)
        assert out.norm_mean.tolist() == [2.0] and out.norm_std.tolist() == [1.0]
        assert out.normalized[:2, 0].tolist() == [-1.0, 1.0]
        assert out.normalized[2, 0] == 98.0

    def test_stats_recomputed_from_train_block(self, rng):
        values = rng.standard_normal((50, 3)) * [1, 5, 10]
        values[35:] += 1000  # val/test far away; must not leak into stats
        out = normalize(SeriesDataset(values, ["a", "b", "c"], split_sizes=(35, 5, 10)))
        np.testing.assert_allclose(out.norm_mean, values[:35].mean(axis=0), rtol=1e-14)
        np.testing.assert_allclose(out.norm_std, values[:35].std(axis=0), rtol=1e-14)

    def test_constant_channel_warns(self):
        ds = SeriesDataset(np.column_stack([np.full(10, 4.0), np.arange(10.0)]), ["c", "x"])
        with pytest.warns(RuntimeWarning, match="constant"):
            out = normalize(ds)
        assert np.all(out.normalized[:, 0] == 0.0)
        assert out.norm_std[0] > 0

    def test_empty_train(self):
        with pytest.raises(ConfigurationError):
            normalize(SeriesDataset(np.ones(5), ["x"], split_sizes=(0, 2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(5, 40), st.integers(1, 4))
    def test_roundtrip(self, seed, length, channels):
        values = np.random.default_rng(seed).standard_normal((length, channels)) * 7 + 3
        out = normalize(SeriesDataset(values, list("abcd")[:channels]))
        back = denormalize(out.normalized, out.norm_mean, out.norm_std)
        assert np.max(np.abs(back - values)) <= 1e-10


class TestWindows:
    def test_boundary_single(self):
        assert window_count(100, 96, 4) == 1

    def test_count(self):
        assert window_count(200, 96, 24) == 200 - 96 - 24 + 1 == 81

    def test_too_short_warns(self):
        with pytest.warns(RuntimeWarning):
            assert len(window_starts(range(0, 50), 48, 4)) == 0

    def test_adjacent_and_inside_split(self, rng):
        values = np.arange(300.0)[:, None]
        r = range(100, 230)
        samples = list(windows(values, r, 20, 5))
        assert len(samples) == 130 - 25 + 1
        for w in samples:
            assert w.input[0, 0] == w.start_index
            assert w.target[0, 0] == w.start_index + 20
            assert r.start <= w.start_index and w.target[-1, 0] < r.stop

    def test_shuffle_deterministic(self):
        a = window_starts(range(0, 200), 10, 5, seed=3)
        b = window_starts(range(0, 200), 10, 5, seed=3)
        assert np.array_equal(a, b)
        assert sorted(a.tolist()) == list(range(186))

    def test_count_formula_random_triples(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            length, lh, lf = int(rng.integers(1, 120)), int(rng.integers(1, 60)), int(rng.integers(1, 30))
            enumerated = sum(1 for s in range(length) if s + lh + lf <= length)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert len(window_starts(range(length), lh, lf)) == enumerated
            assert window_count(length, lh, lf) == enumerated


class TestSynthetic:
    @pytest.mark.parametrize("kind", ["ar1", "sine_mix", "trend_season_noise"])
    def test_seeded(self, kind):
        a = synthetic(kind, 300, 3, seed=5).values
        assert np.array_equal(a, synthetic(kind, 300, 3, seed=5).values)
        assert not np.array_equal(a, synthetic(kind, 300, 3, seed=6).values)

    def test_ar1_closed_form(self):
        x = synthetic("ar1", 30, 1, noise=0.0, x0=1.0).values[:, 0]
        np.testing.assert_allclose(x, 0.9 ** np.arange(30), rtol=1e-12)

    def test_sine_mix_bounded(self):
        x = synthetic("sine_mix", 2000, 4, noise=0.0).values
        # each channel has at most three sinusoids with amplitude <= 1.5
        assert np.max(np.abs(x)) <= 3 * 1.5

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            synthetic("walk", 10)


def test_dataset_cache_roundtrip(tmp_path):
    ds = normalize(SeriesDataset(synthetic("ar1", 100, 2).values, ["a", "b"], split_sizes=(60, 20, 20)))
    save_dataset(tmp_path / "ds.bin", ds)
    back = load_dataset(tmp_path / "ds.bin")
    assert np.array_equal(back.normalized, ds.normalized)
    assert back.split_sizes == (60, 20, 20) and back.column_names == ["a", "b"]
