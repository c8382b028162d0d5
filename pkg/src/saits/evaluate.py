"""Imputation metrics, the Median and Last baselines, and report output."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ImputationDataset, Split
from .errors import DataError, DimensionError, EmptyMaskError


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    mre: float | None  # None when the target mass under the mask is zero
    mse: float

    @property
    def mre_defined(self):
        return self.mre is not None


def metrics(estimation, target, mask):
    """MAE, RMSE, MRE and MSE over entries where ``mask`` is 1."""
    est = np.asarray(estimation, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if not (est.shape == tgt.shape == m.shape):
        raise DimensionError(f"metrics: shapes differ: {est.shape}, {tgt.shape}, {m.shape}")
    n = m.sum()
    if n == 0:
        raise EmptyMaskError("metrics: mask selects no positions")
    err = (est - tgt) * m
    abs_sum = np.abs(err).sum()
    mse = (err ** 2).sum() / n
    # RMSE via the largest error so tiny/huge errors neither underflow nor overflow
    scale = np.abs(err).max()
    rmse = scale * math.sqrt(((err / scale) ** 2).sum() / n) if scale > 0 else 0.0
    denom = np.abs(tgt * m).sum()
    return Metrics(
        mae=float(abs_sum / n),
        rmse=float(rmse),
        mre=float(abs_sum / denom) if denom > 0 else None,
        mse=float(mse),
    )


def _fill(split: Split, values):
    return np.where(split.M == 1, split.X, values)


def baseline_median(dataset: ImputationDataset):
    """Fill every unobserved entry with its feature's median over the
    observed training values (mean of the two middle values for even counts)."""
    X, M = dataset.train.X, dataset.train.M
    medians = np.empty(X.shape[2])
    for d in range(X.shape[2]):
        obs = X[..., d][M[..., d] == 1]
        if obs.size == 0:
            raise DataError(f"feature {dataset.feature_names[d]!r} has no observed training values")
        medians[d] = np.median(obs)
    return {name: _fill(split, medians) for name, split in dataset.splits().items()}


def last_observation_fill(X, M):
    """Forward-fill each (sample, feature) along time; leading gaps get 0."""
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M)
    n, T, _ = X.shape
    idx = np.where(M == 1, np.arange(T)[None, :, None], -1)
    idx = np.maximum.accumulate(idx, axis=1)
    filled = np.take_along_axis(X, np.maximum(idx, 0), axis=1)
    return np.where(idx >= 0, filled, 0.0)


def baseline_last(dataset: ImputationDataset):
    return {name: last_observation_fill(split.X, split.M) for name, split in dataset.splits().items()}


@dataclass
class EvalReport:
    method: str
    split: str
    standardized: Metrics
    original: Metrics | None
    n_positions: int
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def row(self):
        out = {"method": self.method, "split": self.split, "n_positions": self.n_positions}
        for prefix, m in (("", self.standardized), ("orig_", self.original)):
            for key in ("mae", "rmse", "mre", "mse"):
                value = getattr(m, key) if m is not None else None
                out[prefix + key] = "" if value is None else repr(value)
        return out

    def to_dict(self):
        return asdict(self)


def evaluate_method(imputed, dataset: ImputationDataset, method_name, split="test",
                    config=None, seed=None):
    """Score ``imputed`` (array for ``split``, or a dict keyed by split)
    against the held-out ground truth of that split."""
    part = dataset.split(split)
    if isinstance(imputed, dict):
        imputed = imputed[split]
    imputed = np.asarray(imputed, dtype=np.float64)
    if not part.has_holdout:
        raise DataError(f"split {split!r} has no holdout mask to evaluate against")
    if imputed.shape != part.X.shape:
        raise DimensionError(f"imputed shape {imputed.shape} != split shape {part.X.shape}")
    std_metrics = metrics(imputed, part.X_holdout, part.M_holdout)
    orig = None
    if dataset.standardizer is not None:
        inv = dataset.standardizer.inverse
        orig = metrics(inv(imputed), inv(part.X_holdout), part.M_holdout)
    return EvalReport(method_name, split, std_metrics, orig, int(part.M_holdout.sum()),
                      dict(config or {}), seed)


REPORT_FIELDS = ["method", "split", "n_positions", "mae", "rmse", "mre", "mse",
                 "orig_mae", "orig_rmse", "orig_mre", "orig_mse"]


def write_reports(reports, csv_path, json_path=None, run_config=None):
    """One CSV row per (method, split); JSON sidecar with the full echo."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({"config": run_config or {}, "reports": [r.to_dict() for r in reports]},
                      fh, indent=2, sort_keys=True)
