"""Dataset ingestion, windowing, splitting, standardisation, evaluation
hole punching and synthetic data generation.

Convention: raw values use NaN for absent entries.  Packed splits carry
an explicit mask ``M`` (1 = observed) and store 0 wherever ``M == 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .container import read_container, write_container
from .errors import CheckpointError, ConfigError, DataError, ParseError

SPLITS = ("train", "val", "test")


def masked_count(rate, n_observed):
    """``round(rate * n)`` with halves rounded away from zero; at least 1
    whenever ``rate > 0`` and something is observed."""
    if rate <= 0 or n_observed == 0:
        return 0
    k = int(math.floor(rate * n_observed + 0.5))
    return min(max(k, 1), n_observed)


@dataclass
class RawSeries:
    feature_names: list
    values: np.ndarray  # (rows, D), NaN = absent
    sample_ids: list | None = None

    @property
    def mask(self):
        return (~np.isnan(self.values)).astype(np.float64)

    def __len__(self):
        return self.values.shape[0]


def ingest_csv(path, na_tokens=("", "NA", "NaN", "nan"), id_column=None, delimiter=","):
    """Read a header + one-row-per-step CSV.

    Cells matching ``na_tokens`` (after stripping) are recorded as missing.
    ``id_column`` names an optional column grouping rows into pre-segmented
    samples; it is excluded from the features.
    """
    na = {t.strip() for t in na_tokens}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if not any(header):
            raise ParseError("header row is empty", line=1)
        id_idx = None
        if id_column is not None:
            if id_column not in header:
                raise ParseError(f"id column {id_column!r} not in header", line=1)
            id_idx = header.index(id_column)
        feature_idx = [i for i in range(len(header)) if i != id_idx]
        rows, ids = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(row)}", line=lineno)
            parsed = []
            for i in feature_idx:
                cell = row[i].strip()
                if cell in na:
                    parsed.append(np.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r} in column {header[i]!r}",
                                     line=lineno) from None
            rows.append(parsed)
            if id_idx is not None:
                ids.append(row[id_idx].strip())
    if not rows:
        raise ParseError("no data rows", line=2)
    values = np.asarray(rows, dtype=np.float64)
    return RawSeries([header[i] for i in feature_idx], values, ids if id_idx is not None else None)


def window(raw, T, stride=1):
    """Cut ``raw`` into ``floor((len - T) / stride) + 1`` windows of T rows.

    ``raw`` may be a :class:`RawSeries` or a (rows, D) array.  When the
    series carries sample ids, each id is windowed separately.
    """
    if stride < 1 or T < 1:
        raise ConfigError(f"need T >= 1 and stride >= 1, got T={T}, stride={stride}")
    if isinstance(raw, RawSeries) and raw.sample_ids is not None:
        groups = {}
        for row, sid in zip(raw.values, raw.sample_ids):
            groups.setdefault(sid, []).append(row)
        return np.concatenate([window(np.asarray(g), T, stride) for g in groups.values()])
    values = raw.values if isinstance(raw, RawSeries) else np.asarray(raw, dtype=np.float64)
    length = values.shape[0]
    if length < T:
        raise DataError(f"series of length {length} is shorter than window T={T}")
    n = (length - T) // stride + 1
    return np.stack([values[i * stride:i * stride + T] for i in range(n)])


@dataclass
class Split:
    X: np.ndarray
    M: np.ndarray
    X_holdout: np.ndarray | None = None
    M_holdout: np.ndarray | None = None

    @property
    def has_holdout(self):
        return self.M_holdout is not None

    def __len__(self):
        return self.X.shape[0]


def pack(samples):
    """NaN-coded (n, T, D) samples -> Split with zero fill at missing entries."""
    samples = np.asarray(samples, dtype=np.float64)
    M = (~np.isnan(samples)).astype(np.float64)
    return Split(np.where(M == 1, samples, 0.0), M)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X, M):
        return np.where(M == 1, (X - self.mean) / self.std, 0.0)

    def inverse(self, X):
        return X * self.std + self.mean


@dataclass
class ImputationDataset:
    train: Split
    val: Split
    test: Split
    feature_names: list
    standardizer: Standardizer | None = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.train.X.shape[1]

    @property
    def D(self):
        return self.train.X.shape[2]

    def split(self, name):
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def splits(self):
        return {name: getattr(self, name) for name in SPLITS}


def split_samples(samples, val_fraction=0.2, test_fraction=0.2, rng=None):
    """Split (n, T, D) samples into train/val/test.

    ``test_fraction`` is taken from all samples, ``val_fraction`` from what
    remains.  Without ``rng`` the order is chronological: test first, then
    validation, then training.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    order = np.arange(n) if rng is None else rng.permutation(n)
    n_test = int(round(n * test_fraction))
    n_val = int(round((n - n_test) * val_fraction))
    if n - n_test - n_val < 1 or n_val < 1 or n_test < 1:
        raise DataError(f"{n} samples are too few for the requested split")
    test = samples[order[:n_test]]
    val = samples[order[n_test:n_test + n_val]]
    train = samples[order[n_test + n_val:]]
    return pack(train), pack(val), pack(test)


def punch_eval_holes(split: Split, fraction=0.10, rng=None):
    """Hide a uniform ``fraction`` of the observed entries of ``split``.

    The hidden values move to ``X_holdout`` (with ``M_holdout = 1``) and
    are zeroed in the working copy.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"hole fraction must lie in (0, 1), got {fraction}")
    rng = rng if rng is not None else np.random.default_rng()
    observed = np.flatnonzero(split.M.ravel() == 1)
    if observed.size == 0:
        raise DataError("split has no observed entries to hold out")
    k = masked_count(fraction, observed.size)
    chosen = rng.choice(observed, size=k, replace=False)
    M_holdout = np.zeros(split.M.size)
    M_holdout[chosen] = 1.0
    M_holdout = M_holdout.reshape(split.M.shape)
    X_holdout = np.where(M_holdout == 1, split.X, 0.0)
    M = split.M * (1.0 - M_holdout)
    X = np.where(M == 1, split.X, 0.0)
    return Split(X, M, X_holdout, M_holdout)


def restore_holes(split: Split):
    """Inverse of :func:`punch_eval_holes`."""
    if not split.has_holdout:
        return split
    return Split(split.X + split.X_holdout, split.M + split.M_holdout)


def standardize_fit_transform(dataset: ImputationDataset):
    """Fit per-feature mean/std on observed training values; transform all splits."""
    X, M = dataset.train.X, dataset.train.M
    counts = M.sum(axis=(0, 1))
    names = dataset.feature_names
    sparse = [names[d] for d in np.flatnonzero(counts < 2)]
    if sparse:
        raise DataError(f"features with fewer than 2 observed training values: {sparse}")
    mean = (X * M).sum(axis=(0, 1)) / counts
    var = (((X - mean) * M) ** 2).sum(axis=(0, 1)) / counts
    std = np.sqrt(var)
    flat = [names[d] for d in np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean)))]
    if flat:
        raise DataError(f"zero-variance features in training split: {flat}")
    scaler = Standardizer(mean, std)

    def tf(split):
        out = Split(scaler.transform(split.X, split.M), split.M.copy())
        if split.has_holdout:
            out.X_holdout = scaler.transform(split.X_holdout, split.M_holdout)
            out.M_holdout = split.M_holdout.copy()
        return out

    return replace(dataset, train=tf(dataset.train), val=tf(dataset.val), test=tf(dataset.test),
                   standardizer=scaler)


def build_dataset(samples, feature_names=None, holes=0.10, seed=0, val_fraction=0.2,
                  test_fraction=0.2, shuffle=True, meta=None):
    """NaN-coded samples -> standardized :class:`ImputationDataset` with
    evaluation holes punched in val and test."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise DataError(f"samples must be (n, T, D), got {samples.shape}")
    split_ss, val_ss, test_ss = np.random.SeedSequence(seed).spawn(3)
    rng = np.random.default_rng(split_ss) if shuffle else None
    train, val, test = split_samples(samples, val_fraction, test_fraction, rng)
    val = punch_eval_holes(val, holes, np.random.default_rng(val_ss))
    test = punch_eval_holes(test, holes, np.random.default_rng(test_ss))
    names = list(feature_names) if feature_names is not None else [f"f{d}" for d in range(samples.shape[2])]
    ds = ImputationDataset(train, val, test, names, meta=dict(meta or {}))
    return standardize_fit_transform(ds)


def apply_mcar(samples, missing_rate, rng):
    """Blank out ``round(rate * #observed)`` uniformly chosen observed entries."""
    samples = np.array(samples, dtype=np.float64)
    observed = np.flatnonzero(~np.isnan(samples.ravel()))
    k = masked_count(missing_rate, observed.size)
    if k:
        flat = samples.reshape(-1)
        flat[rng.choice(observed, size=k, replace=False)] = np.nan
    return samples


def _sine_mixture(rng, n, T, D, n_latent=3, noise=0.1):
    mixing = rng.normal(size=(D, n_latent))
    offsets = rng.normal(scale=2.0, size=D)
    scales = rng.uniform(0.5, 3.0, size=D)
    lags = rng.uniform(0.0, 1.0, size=D)
    amp = rng.uniform(0.5, 1.5, size=(n, n_latent))
    freq = rng.uniform(0.2, 0.9, size=(n, n_latent))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n, n_latent))
    t = np.arange(T, dtype=np.float64)
    # latent[i, t, d, k]: each feature sees the shared latents with its own lag.
    arg = freq[:, None, None, :] * (t[None, :, None, None] + lags[None, None, :, None]) + phase[:, None, None, :]
    latent = amp[:, None, None, :] * np.sin(arg)
    clean = np.einsum("itdk,dk->itd", latent, mixing)
    return offsets + scales * (clean + noise * rng.normal(size=(n, T, D)))


def _random_walk(rng, n, T, D, step=0.3, coupling=0.5):
    shared = rng.normal(size=(n, T, 1))
    own = rng.normal(size=(n, T, D))
    steps = step * (coupling * shared + math.sqrt(1 - coupling ** 2) * own)
    start = rng.normal(scale=3.0, size=(n, 1, D))
    return start + np.cumsum(steps, axis=1)


GENERATORS = {"sine_mixture": _sine_mixture, "random_walk": _random_walk}


def synth_generate(kind, n, T, D, missing_rate=0.1, seed=0, holes=0.10):
    """Deterministic synthetic dataset.

    ``sine_mixture``: every feature is a fixed linear mix of a few
    per-sample sinusoids (random amplitude, frequency, phase) plus noise,
    so features are informative about each other.  ``random_walk``:
    cross-correlated Gaussian random walks.  MCAR missingness is applied at
    ``missing_rate`` before splitting and hole punching.
    """
    if kind not in GENERATORS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {sorted(GENERATORS)}")
    for name, value in (("n", n), ("T", T), ("D", D)):
        if int(value) != value or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value}")
    if not 0.0 <= missing_rate < 1.0:
        raise ConfigError(f"missing_rate must lie in [0, 1), got {missing_rate}")
    gen_ss, mcar_ss = np.random.SeedSequence(seed).spawn(2)
    samples = GENERATORS[kind](np.random.default_rng(gen_ss), int(n), int(T), int(D))
    samples = apply_mcar(samples, missing_rate, np.random.default_rng(mcar_ss))
    meta = {"source": "synthetic", "kind": kind, "n": int(n), "T": int(T), "D": int(D),
            "missing_rate": missing_rate, "seed": seed, "holes": holes}
    return build_dataset(samples, holes=holes, seed=seed, meta=meta)


# -- file format ------------------------------------------------------------------

def save_dataset(dataset: ImputationDataset, path, kind="dataset"):
    arrays = {}
    for name, split in dataset.splits().items():
        arrays[f"{name}.X"] = split.X
        arrays[f"{name}.M"] = split.M
        if split.has_holdout:
            arrays[f"{name}.X_holdout"] = split.X_holdout
            arrays[f"{name}.M_holdout"] = split.M_holdout
    if dataset.standardizer is not None:
        arrays["standardizer.mean"] = dataset.standardizer.mean
        arrays["standardizer.std"] = dataset.standardizer.std
    meta = {"feature_names": list(dataset.feature_names), "info": dataset.meta}
    write_container(path, kind, arrays, meta)


def load_dataset(path):
    header, arrays = read_container(path)
    if header["kind"] not in ("dataset", "imputed"):
        raise CheckpointError(f"{path}: not a dataset file (kind={header['kind']!r})")
    splits = {}
    for name in SPLITS:
        if f"{name}.X" not in arrays:
            raise CheckpointError(f"{path}: split {name!r} missing")
        splits[name] = Split(arrays[f"{name}.X"], arrays[f"{name}.M"],
                             arrays.get(f"{name}.X_holdout"), arrays.get(f"{name}.M_holdout"))
    scaler = None
    if "standardizer.mean" in arrays:
        scaler = Standardizer(arrays["standardizer.mean"], arrays["standardizer.std"])
    meta = header["meta"]
    return ImputationDataset(splits["train"], splits["val"], splits["test"],
                             meta["feature_names"], scaler, meta.get("info", {}))
