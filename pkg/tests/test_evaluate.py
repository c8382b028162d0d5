import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from saits.data import ImputationDataset, Split, standardize_fit_transform
from saits.errors import DimensionError, EmptyMaskError
from saits.evaluate import (REPORT_FIELDS, baseline_last, baseline_median, evaluate_method,
                            last_observation_fill, metrics, write_reports)


def loop_metrics(est, tgt, mask):
    abs_sum = sq_sum = tgt_sum = n = 0.0
    for e, t, m in zip(est.ravel(), tgt.ravel(), mask.ravel()):
        if m:
            abs_sum += abs(e - t)
            sq_sum += (e - t) ** 2
            tgt_sum += abs(t)
            n += 1
    return abs_sum / n, math.sqrt(sq_sum / n), abs_sum / tgt_sum, sq_sum / n


class TestMetrics:
    def test_two_points(self):
        m = metrics([1.0, 3.0], [0.0, 0.0], [1, 1])
        assert m.mae == 2.0
        assert m.rmse == pytest.approx(math.sqrt(5))
        assert m.mse == 5.0
        assert m.mre is None and not m.mre_defined

    def test_mre(self):
        m = metrics([2.0, 2.0], [1.0, 3.0], [1, 1])
        assert m.mae == 1.0 and m.mre == 0.5

    def test_masked_out_ignored(self):
        m = metrics([5.0, 1.0], [0.0, 1.0], [0, 1])
        assert m.mae == 0.0 and m.rmse == 0.0

    def test_empty(self):
        with pytest.raises(EmptyMaskError):
            metrics([1.0], [1.0], [0])

    def test_shape(self):
        with pytest.raises(DimensionError):
            metrics(np.ones(3), np.ones(2), np.ones(3))

    def test_against_loops(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            shape = tuple(rng.integers(1, 5, size=3))
            est, tgt = rng.normal(size=shape), rng.normal(size=shape)
            mask = (rng.random(shape) < 0.5).astype(float)
            mask.reshape(-1)[0] = 1
            got = metrics(est, tgt, mask)
            want = loop_metrics(est, tgt, mask)
            np.testing.assert_allclose((got.mae, got.rmse, got.mre, got.mse), want, rtol=0, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)),
           hnp.arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)),
           hnp.arrays(np.bool_, 12))
    def test_rmse_dominates_mae(self, est, tgt, mask):
        mask[0] = True
        m = metrics(est, tgt, mask)
        assert m.rmse >= m.mae * (1 - 1e-12)


class TestLastFill:
    def test_forward_fill(self):
        X = np.array([0.0, 5.0, 0.0, 0.0]).reshape(1, 4, 1)
        M = np.array([0, 1, 0, 0]).reshape(1, 4, 1)
        np.testing.assert_array_equal(last_observation_fill(X, M).ravel(), [0, 5, 5, 5])

    def test_all_observed(self):
        X = np.random.default_rng(0).normal(size=(2, 5, 3))
        np.testing.assert_array_equal(last_observation_fill(X, np.ones_like(X)), X)

    def test_per_feature(self):
        X = np.array([[[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]])
        M = np.array([[[1, 0], [0, 1], [0, 0]]])
        np.testing.assert_array_equal(last_observation_fill(X, M)[0], [[1, 0], [1, 2], [1, 2]])


def tiny_dataset(train_values):
    """One feature, one training sample holding ``train_values``."""
    v = np.asarray(train_values, dtype=float).reshape(1, -1, 1)
    train = Split(v, np.ones_like(v))
    X = np.array([[[1.0], [0.0], [3.0], [0.0]]])
    M = np.array([[[1.0], [0.0], [1.0], [0.0]]])
    hold = np.array([[[0.0], [1.0], [0.0], [1.0]]])
    test = Split(X, M, np.array([[[0.0], [2.0], [0.0], [4.0]]]), hold)
    return ImputationDataset(train, test, test, ["f"])


class TestMedian:
    def test_odd(self):
        filled = baseline_median(tiny_dataset([1, 2, 100]))["test"]
        np.testing.assert_array_equal(filled.ravel(), [1, 2, 3, 2])

    def test_even(self):
        filled = baseline_median(tiny_dataset([1, 3]))["test"]
        assert filled.ravel()[1] == 2.0

    def test_keeps_observed(self):
        filled = baseline_median(tiny_dataset([7, 8, 9]))["test"]
        assert filled.ravel()[0] == 1.0 and filled.ravel()[2] == 3.0

    def test_report(self):
        ds = tiny_dataset([1, 2, 100])
        r = evaluate_method(baseline_median(ds), ds, "median", "test")
        # holdout truths 2 and 4 filled with 2 -> errors 0 and 2
        assert r.standardized.mae == 1.0 and r.n_positions == 2
        assert r.original is None


class TestReports:
    def setup_method(self):
        rng = np.random.default_rng(0)
        X = rng.normal(3.0, 2.0, size=(6, 5, 2))
        train = Split(X[:4], np.ones_like(X[:4]))
        M = np.ones((2, 5, 2))
        hold = np.zeros_like(M)
        hold[:, 1] = 1
        M -= hold
        val = Split(X[4:] * M, M, X[4:] * hold, hold)
        self.ds = standardize_fit_transform(ImputationDataset(train, val, val, ["a", "b"]))

    def test_original_units(self):
        r = evaluate_method(baseline_last(self.ds), self.ds, "last", "val")
        std = self.ds.standardizer.std
        split = self.ds.val
        filled = baseline_last(self.ds)["val"]
        err = np.abs(filled - split.X_holdout) * split.M_holdout * std
        assert r.original.mae == pytest.approx(err.sum() / split.M_holdout.sum(), abs=1e-12)

    def test_one_row_per_method_and_split(self, tmp_path):
        reports = [evaluate_method(fill, self.ds, name, split)
                   for name, fill in (("median", baseline_median(self.ds)), ("last", baseline_last(self.ds)))
                   for split in ("val", "test")]
        write_reports(reports, tmp_path / "r.csv", tmp_path / "r.json", {"seed": 1})
        with open(tmp_path / "r.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        assert list(rows[0]) == REPORT_FIELDS
        assert {(r["method"], r["split"]) for r in rows} == {
            ("median", "val"), ("median", "test"), ("last", "val"), ("last", "test")}
        payload = json.loads((tmp_path / "r.json").read_text())
        assert payload["config"] == {"seed": 1} and len(payload["reports"]) == 4

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            evaluate_method(np.zeros((1, 5, 2)), self.ds, "x", "val")
