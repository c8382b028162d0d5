import numpy as np
import pytest

from saits.data import (ImputationDataset, Split, build_dataset, ingest_csv, load_dataset,
                        masked_count, pack, punch_eval_holes, restore_holes, save_dataset,
                        standardize_fit_transform, synth_generate, window)
from saits.errors import CheckpointError, ConfigError, DataError, ParseError
from saits.evaluate import baseline_last, baseline_median, evaluate_method


class TestIngest:
    def test_missing_cell(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,\n2,3\n")
        raw = ingest_csv(p)
        assert raw.feature_names == ["a", "b"]
        assert raw.values.shape == (2, 2)
        assert np.isnan(raw.values[0, 1]) and raw.mask.sum() == 3

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(ParseError):
            ingest_csv(p)

    def test_na_token(self, tmp_path):
        p = tmp_path / "n.csv"
        p.write_text("a,b\nNaN,1\n2,3\n")
        raw = ingest_csv(p, na_tokens=("NaN",))
        assert np.isnan(raw.values[0, 0])

    def test_ragged_row_line_number(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("a,b\n1,2\n3\n")
        with pytest.raises(ParseError, match="line 3"):
            ingest_csv(p)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n3,foo\n")
        with pytest.raises(ParseError, match="line 3"):
            ingest_csv(p)

    def test_id_column_groups_samples(self, tmp_path):
        p = tmp_path / "ids.csv"
        rows = ["sid,a,b"] + [f"{s},{t},{t * 2}" for s in ("x", "y") for t in range(4)]
        p.write_text("\n".join(rows) + "\n")
        raw = ingest_csv(p, id_column="sid")
        assert raw.feature_names == ["a", "b"]
        w = window(raw, T=4)
        assert w.shape == (2, 4, 2)


class TestWindow:
    def test_electricity_single(self):
        assert window(np.zeros((100, 3)), 100, 1).shape[0] == 1

    def test_formula(self):
        series = np.arange(48 * 2, dtype=float).reshape(48, 2)
        out = window(series, 24, 12)
        assert out.shape == (3, 24, 2)
        assert out.shape[0] == (48 - 24) // 12 + 1
        np.testing.assert_array_equal(out[1], series[12:36])

    def test_exact_length(self):
        series = np.random.default_rng(0).normal(size=(24, 3))
        np.testing.assert_array_equal(window(series, 24)[0], series)

    def test_too_short(self):
        with pytest.raises(DataError):
            window(np.zeros((5, 2)), 6)

    def test_bad_stride(self):
        with pytest.raises(ConfigError):
            window(np.zeros((5, 2)), 2, 0)


def raw_dataset(seed=0, n=30, T=5, D=3):
    rng = np.random.default_rng(seed)
    samples = rng.normal(loc=3.0, scale=2.0, size=(n, T, D))
    samples[rng.random(samples.shape) < 0.2] = np.nan
    train, val, test = pack(samples[:20]), pack(samples[20:25]), pack(samples[25:])
    return ImputationDataset(train, punch_eval_holes(val, 0.1, rng), punch_eval_holes(test, 0.1, rng),
                             [f"f{d}" for d in range(D)])


class TestStandardize:
    def test_train_statistics(self):
        ds = standardize_fit_transform(raw_dataset())
        X, M = ds.train.X, ds.train.M
        for d in range(X.shape[2]):
            obs = X[..., d][M[..., d] == 1]
            assert abs(obs.mean()) < 1e-9
            assert obs.std() == pytest.approx(1.0, abs=1e-9)
        assert np.all(ds.train.X[ds.train.M == 0] == 0)

    def test_round_trip(self):
        raw = raw_dataset()
        ds = standardize_fit_transform(raw)
        M = raw.val.M
        back = ds.standardizer.inverse(ds.val.X)
        np.testing.assert_allclose(back[M == 1], raw.val.X[M == 1], atol=1e-10)

    def test_val_does_not_affect_stats(self):
        raw = raw_dataset()
        a = standardize_fit_transform(raw).standardizer
        raw.val.X[...] = 1000.0
        b = standardize_fit_transform(raw).standardizer
        np.testing.assert_array_equal(a.mean, b.mean)

    def test_constant_feature(self):
        raw = raw_dataset()
        raw.train.X[..., 1] = 4.0
        with pytest.raises(DataError, match="f1"):
            standardize_fit_transform(raw)


class TestHoles:
    def test_exact_count(self):
        M = np.zeros((10, 10, 20))
        M.reshape(-1)[:1000] = 1
        split = Split(np.random.default_rng(0).normal(size=M.shape) * M, M)
        out = punch_eval_holes(split, 0.10, np.random.default_rng(1))
        assert out.M_holdout.sum() == 100

    def test_partition_and_inverse(self):
        rng = np.random.default_rng(2)
        samples = rng.normal(size=(6, 5, 4))
        samples[rng.random(samples.shape) < 0.3] = np.nan
        split = pack(samples)
        out = punch_eval_holes(split, 0.10, rng)
        assert np.all(out.M_holdout * out.M == 0)
        assert np.all(out.X[out.M == 0] == 0)
        back = restore_holes(out)
        assert np.array_equal(back.X, split.X) and np.array_equal(back.M, split.M)

    def test_no_observed(self):
        with pytest.raises(DataError):
            punch_eval_holes(Split(np.zeros((1, 2, 2)), np.zeros((1, 2, 2))), 0.1)

    @pytest.mark.parametrize("frac", [0.0, 1.0])
    def test_bad_fraction(self, frac):
        with pytest.raises(ConfigError):
            punch_eval_holes(Split(np.zeros((1, 2, 2)), np.ones((1, 2, 2))), frac)

    def test_rounding(self):
        assert masked_count(0.2, 1000) == 200
        assert masked_count(0.25, 2) == 1   # 0.5 rounds away from zero
        assert masked_count(0.01, 3) == 1   # at least one
        assert masked_count(0.2, 0) == 0


class TestSynth:
    def test_no_missing(self):
        ds = synth_generate("sine_mixture", 40, 8, 3, missing_rate=0.0, seed=1)
        assert ds.train.M.all()
        assert np.all(ds.val.M + ds.val.M_holdout == 1)

    def test_deterministic(self):
        a = synth_generate("random_walk", 40, 8, 3, 0.1, seed=4)
        b = synth_generate("random_walk", 40, 8, 3, 0.1, seed=4)
        for name in ("train", "val", "test"):
            sa, sb = a.split(name), b.split(name)
            assert np.array_equal(sa.X, sb.X) and np.array_equal(sa.M, sb.M)
        assert np.array_equal(a.test.M_holdout, b.test.M_holdout)

    def test_seed_changes_data(self):
        a = synth_generate("sine_mixture", 40, 8, 3, 0.1, seed=1)
        b = synth_generate("sine_mixture", 40, 8, 3, 0.1, seed=2)
        assert not np.array_equal(a.train.X, b.train.X)

    def test_split_sizes_and_missing_rate(self):
        ds = synth_generate("sine_mixture", 512, 24, 8, 0.1, seed=0)
        assert (len(ds.train), len(ds.val), len(ds.test)) == (328, 82, 102)
        total = sum(s.M.sum() + (s.M_holdout.sum() if s.has_holdout else 0)
                    for s in ds.splits().values())
        assert 1 - total / (512 * 24 * 8) == pytest.approx(0.1, abs=1e-4)

    def test_last_beats_median_on_random_walk(self):
        ds = synth_generate("random_walk", 300, 24, 6, 0.1, seed=0)
        med = evaluate_method(baseline_median(ds), ds, "median", "test").standardized.mae
        last = evaluate_method(baseline_last(ds), ds, "last", "test").standardized.mae
        assert last < med

    @pytest.mark.parametrize("kw", [dict(kind="noise"), dict(missing_rate=1.5), dict(n=0)])
    def test_validation(self, kw):
        args = dict(kind="sine_mixture", n=10, T=4, D=2, missing_rate=0.1)
        args.update(kw)
        with pytest.raises(ConfigError):
            synth_generate(**args)


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        ds = synth_generate("sine_mixture", 50, 6, 3, 0.1, seed=0)
        save_dataset(ds, tmp_path / "d.bin")
        back = load_dataset(tmp_path / "d.bin")
        for name in ("train", "val", "test"):
            a, b = ds.split(name), back.split(name)
            assert np.array_equal(a.X, b.X) and np.array_equal(a.M, b.M)
        assert np.array_equal(ds.val.X_holdout, back.val.X_holdout)
        assert np.array_equal(ds.standardizer.std, back.standardizer.std)
        assert back.meta["kind"] == "sine_mixture"

    def test_corruption_detected(self, tmp_path):
        ds = synth_generate("sine_mixture", 50, 6, 3, 0.1, seed=0)
        path = tmp_path / "d.bin"
        save_dataset(ds, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="checksum"):
            load_dataset(path)


def test_build_dataset_packing_convention():
    rng = np.random.default_rng(0)
    samples = rng.normal(size=(40, 6, 3))
    samples[rng.random(samples.shape) < 0.2] = np.nan
    ds = build_dataset(samples, seed=1)
    for split in ds.splits().values():
        assert np.all(np.isfinite(split.X))
        assert np.all(split.X[split.M == 0] == 0)
        if split.has_holdout:
            assert np.all(split.M * split.M_holdout == 0)
