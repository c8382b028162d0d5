"""Joint-optimisation training: per-batch artificial masking (MIT),
Adam updates, validation curves, early stopping and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .container import read_container, write_container
from .data import ImputationDataset, Split, masked_count
from .errors import CheckpointError, DataError, NonFiniteGradient, TrainingDiverged
from .model import SaitsConfig, build_model, joint_loss

log = logging.getLogger(__name__)


def apply_mit_mask(X, M, rate, rng):
    """Artificially mask ``round(rate * #observed)`` observed entries.

    Returns ``(X_hat, M_hat, I)`` where ``M_hat = M - I``, ``I`` marks the
    artificially masked entries and ``X_hat`` is zero wherever
    ``M_hat == 0``.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"MIT rate must lie in (0, 1), got {rate}")
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    observed = np.flatnonzero(M.ravel() == 1)
    if observed.size == 0:
        raise DataError("batch has no observed values to mask")
    chosen = rng.choice(observed, size=masked_count(rate, observed.size), replace=False)
    indicating = np.zeros(M.size)
    indicating[chosen] = 1.0
    indicating = indicating.reshape(M.shape)
    m_hat = M - indicating
    return np.where(m_hat == 1, X, 0.0), m_hat, indicating


class Adam:
    """Adam with bias correction over a name -> parameter mapping."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.step_count = 0

    def step(self):
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(name)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"m": {k: a.copy() for k, a in self.m.items()},
                "v": {k: a.copy() for k, a in self.v.items()},
                "step": self.step_count}

    def load(self, state):
        self.m = {k: np.array(a, dtype=np.float64) for k, a in state["m"].items()}
        self.v = {k: np.array(a, dtype=np.float64) for k, a in state["v"].items()}
        self.step_count = int(state["step"])


def clip_grad_norm(params, max_norm):
    """Scale gradients so their global L2 norm is at most ``max_norm``.

    Off by default in :func:`train`; not part of the published recipe.
    """
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * (max_norm / norm)
    return norm


@dataclass
class CurveLog:
    rows: list = field(default_factory=list)

    FIELDS = ("epoch", "train_loss", "val_imputation_mae", "val_reconstruction_mae")

    def append(self, epoch, train_loss, imp_mae, rec_mae):
        self.rows.append((epoch, train_loss, imp_mae, rec_mae))

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        i = self.FIELDS.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            for epoch, loss, imp, rec in self.rows:
                w.writerow([epoch, repr(loss), repr(imp), repr(rec)])


@dataclass
class TrainState:
    """Everything needed to resume or reproduce: parameters, Adam moments,
    early-stopping bookkeeping and RNG states."""

    config: SaitsConfig
    params: dict
    adam: dict
    epoch: int = 0
    best_mae: float = math.inf
    epochs_since_improvement: int = 0
    rng_state: dict = field(default_factory=dict)
    seed: int = 0


@dataclass
class TrainResult:
    model: object
    state: TrainState
    curve: CurveLog
    best_epoch: int
    epochs_run: int


def impute(model, X, M, batch_size=512):
    """Complement vectors for every sample, computed in eval mode."""
    out = []
    model.eval()
    with tn.no_grad():
        for s in range(0, X.shape[0], batch_size):
            out.append(model(X[s:s + batch_size], M[s:s + batch_size]).imputed.data)
    return np.concatenate(out)


def validate(model, split: Split, batch_size=512):
    """``(imputation MAE on holdout, reconstruction MAE on observed)``."""
    imputed, final = [], []
    model.eval()
    with tn.no_grad():
        for s in range(0, len(split), batch_size):
            o = model(split.X[s:s + batch_size], split.M[s:s + batch_size])
            imputed.append(o.imputed.data)
            final.append(o.x3.data)
    imputed, final = np.concatenate(imputed), np.concatenate(final)
    imp = np.abs((imputed - split.X_holdout) * split.M_holdout).sum() / split.M_holdout.sum()
    rec = np.abs((final - split.X) * split.M).sum() / split.M.sum()
    return float(imp), float(rec)


def _snapshot(model, adam, epoch, best_mae, since, rngs, config, seed):
    return TrainState(
        config=config,
        params=model.state_dict(),
        adam=adam.state(),
        epoch=epoch,
        best_mae=best_mae,
        epochs_since_improvement=since,
        rng_state={name: r.bit_generator.state for name, r in rngs.items()},
        seed=seed,
    )


def train(config: SaitsConfig, dataset: ImputationDataset, lr=1e-3, batch_size=128,
          patience=30, max_epochs=10_000, seed=0, grad_clip=None, val_split="val"):
    """Train ``config.variant`` on ``dataset.train`` with early stopping.

    Each epoch shuffles the training samples, re-draws the artificial mask
    for every batch, and then records validation imputation MAE (holdout
    entries) and reconstruction MAE (observed entries).  Training stops once
    imputation MAE has failed to strictly decrease for ``patience`` epochs;
    the returned model carries the best-epoch parameters.
    """
    if (dataset.T, dataset.D) != (config.T, config.D):
        raise DataError(f"dataset is (T={dataset.T}, D={dataset.D}) but config expects "
                        f"(T={config.T}, D={config.D})")
    val = dataset.split(val_split)
    if not val.has_holdout:
        raise DataError(f"split {val_split!r} has no holdout mask")
    model_ss, data_ss = np.random.SeedSequence(seed).spawn(2)
    model = build_model(config, seed=int(model_ss.generate_state(1)[0]))
    rng = np.random.default_rng(data_ss)
    rngs = {"data": rng, "dropout": model.dropout_rng}
    adam = Adam(model.named_parameters(), lr=lr)
    objective = config.objective
    train_split = dataset.train
    n = len(train_split)

    curve = CurveLog()
    best = _snapshot(model, adam, 0, math.inf, 0, rngs, config, seed)
    best_epoch = 0
    since = 0
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            X, M = train_split.X[idx], train_split.M[idx]
            if objective == "ort":
                x_hat, m_hat, indicating = X, M, np.zeros_like(M)
            else:
                x_hat, m_hat, indicating = apply_mit_mask(X, M, config.mit_rate, rng)
            tn.new_tape()
            model.zero_grad()
            out = model(x_hat, m_hat)
            loss, _, _ = joint_loss(out, X, m_hat, indicating, config.lambda_mit, objective)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}", state=best)
            loss.backward()
            if grad_clip is not None:
                clip_grad_norm(model.parameters(), grad_clip)
            try:
                adam.step()
            except NonFiniteGradient as exc:
                raise TrainingDiverged(str(exc), state=best) from exc
            losses.append(value * len(idx))
        imp, rec = validate(model, val)
        curve.append(epoch, float(sum(losses) / n), imp, rec)
        log.debug("epoch %d loss %.5f imp %.5f rec %.5f", epoch, curve.rows[-1][1], imp, rec)
        if imp < best.best_mae:
            since = 0
            best = _snapshot(model, adam, epoch, imp, 0, rngs, config, seed)
            best_epoch = epoch
        else:
            since += 1
        if since >= patience:
            break

    model.load_state_dict(best.params)
    model.eval()
    return TrainResult(model, best, curve, best_epoch, epoch)


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(state: TrainState, path):
    arrays = {f"param.{k}": v for k, v in state.params.items()}
    for k, v in state.adam["m"].items():
        arrays[f"adam.m.{k}"] = v
    for k, v in state.adam["v"].items():
        arrays[f"adam.v.{k}"] = v
    meta = {
        "config": state.config.to_dict(),
        "epoch": state.epoch,
        "best_mae": state.best_mae if math.isfinite(state.best_mae) else None,
        "epochs_since_improvement": state.epochs_since_improvement,
        "adam_step": state.adam["step"],
        "rng_state": state.rng_state,
        "seed": state.seed,
        "n_parameters": int(sum(v.size for v in state.params.values())),
    }
    write_container(path, "checkpoint", arrays, meta)


def load_checkpoint(path):
    """Return ``(model, TrainState)``; the parameter manifest must match the
    model the stored config builds, name for name and shape for shape."""
    header, arrays = read_container(path, kind="checkpoint")
    meta = header["meta"]
    config = SaitsConfig(**meta["config"])
    model = build_model(config)
    expected = {name: p.shape for name, p in model.named_parameters()}
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    found = {k: v.shape for k, v in params.items()}
    if expected != found:
        diff = sorted(set(expected.items()) ^ set(found.items()))
        raise CheckpointError(f"{path}: parameter manifest does not match config: {diff[:6]}")
    model.load_state_dict(params)
    adam = {
        "m": {k[len("adam.m."):]: v for k, v in arrays.items() if k.startswith("adam.m.")},
        "v": {k[len("adam.v."):]: v for k, v in arrays.items() if k.startswith("adam.v.")},
        "step": meta["adam_step"],
    }
    if meta.get("rng_state", {}).get("dropout"):
        model.dropout_rng.bit_generator.state = meta["rng_state"]["dropout"]
    state = TrainState(config=config, params=params, adam=adam, epoch=meta["epoch"],
                       best_mae=meta["best_mae"] if meta["best_mae"] is not None else math.inf,
                       epochs_since_improvement=meta["epochs_since_improvement"],
                       rng_state=meta.get("rng_state", {}), seed=meta.get("seed", 0))
    model.eval()
    return model, state
