"""End-to-end acceptance suite.

Each test checks one criterion at its stated tolerance and prints a single
``ACCEPTANCE <n> PASS|FAIL`` line.  The desk-scale training runs (criteria
5-7) are shared through a module-level cache and take several minutes on a
single CPU core.
"""

import math
import time

import numpy as np
import pytest

from saits import tensor as tn
from saits.data import masked_count, synth_generate
from saits.evaluate import baseline_last, baseline_median, evaluate_method, metrics
from saits.gradcheck import gradcheck_config, run_suite
from saits.model import VARIANTS, build_model, saits_base, tiny
from saits.nn import EncoderLayer
from saits.training import apply_mit_mask, impute, load_checkpoint, save_checkpoint, train

N, T, D, MISSING = 512, 24, 8, 0.1
MAX_EPOCHS, PATIENCE = 200, 30
SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}", flush=True)
        return ok
    return emit


class DeskRuns:
    """Lazily trained desk-scale runs keyed by (variant, seed)."""

    def __init__(self):
        self.datasets = {}
        self.results = {}

    def dataset(self, seed):
        if seed not in self.datasets:
            self.datasets[seed] = synth_generate("sine_mixture", N, T, D, MISSING, seed=seed)
        return self.datasets[seed]

    def run(self, variant, seed):
        key = (variant, seed)
        if key not in self.results:
            self.results[key] = train(tiny(T, D, variant=variant), self.dataset(seed),
                                      patience=PATIENCE, max_epochs=MAX_EPOCHS, seed=seed)
        return self.results[key]


@pytest.fixture(scope="module")
def desk():
    return DeskRuns()


# 1 -------------------------------------------------------------------------------

def test_01_parameter_count(report):
    start = time.perf_counter()
    n = build_model(saits_base(48, 37)).num_parameters()
    elapsed = time.perf_counter() - start
    rel = abs(n - 1.38e6) / 1.38e6
    ok = report(1, rel < 0.01 and elapsed < 1.0,
                f"SAITS-base (T=48, D=37) has {n:,} parameters, {rel:.2%} from 1.38M, built in {elapsed:.2f}s")
    assert ok


# 2 -------------------------------------------------------------------------------

def test_02_gradient_suite(report):
    start = time.perf_counter()
    results = run_suite(gradcheck_config(), seed=0, tol=1e-4, variants=("saits",))
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_error)
    failed = [r.name for r in results if not r.passed]
    ok = report(2, not failed and elapsed < 60,
                f"{len(results)} checks, worst {worst.name} rel err {worst.max_error:.2e}, "
                f"{elapsed:.1f}s" + (f"; failed: {failed}" if failed else ""))
    assert ok


# 3 -------------------------------------------------------------------------------

def _record_layer_weights(model):
    captured = []
    for module in model.modules():
        if isinstance(module, EncoderLayer):
            def wrapped(x, _inner=module.forward):
                out, w = _inner(x)
                captured.append(w.data)
                return out, w
            module.forward = wrapped
    return captured


def test_03_diagonal_mask_invariant(report):
    rng = np.random.default_rng(3)
    masked = [v for v in VARIANTS if v.startswith("saits") and v != "saits_no_diag"]
    worst_diag, worst_row, layers = 0.0, 0.0, 0
    for i in range(100):
        variant = masked[i % len(masked)]
        steps = int(rng.integers(2, 13))
        cfg = tiny(steps, 3, variant=variant)
        model = build_model(cfg, seed=int(rng.integers(2**31)))
        captured = _record_layer_weights(model)
        X = rng.normal(scale=float(rng.uniform(0.5, 5.0)), size=(2, steps, 3))
        M = (rng.random(X.shape) < 0.8).astype(float)
        with tn.no_grad():
            model(X * M, M)
        for w in captured:
            diag = np.diagonal(w, axis1=-2, axis2=-1)
            worst_diag = max(worst_diag, float(diag.max()))
            worst_row = max(worst_row, float(np.abs(w.sum(-1) - diag - 1.0).max()))
            layers += 1
    ok = report(3, worst_diag < 1e-8 and worst_row <= 1e-9,
                f"100 inputs, {layers} DMSA layer maps: max diagonal {worst_diag:.1e}, "
                f"max |off-diagonal row sum - 1| {worst_row:.1e}")
    assert ok


# 4 -------------------------------------------------------------------------------

def test_04_replacement_invariant(report):
    rng = np.random.default_rng(4)
    models = {v: build_model(tiny(T, D, variant=v), seed=i) for i, v in enumerate(VARIANTS)}
    violations = 0
    for _ in range(100):
        X = rng.normal(size=(4, T, D))
        M = (rng.random(X.shape) < rng.uniform(0.2, 0.95)).astype(float)
        x_hat = X * M
        for model in models.values():
            with tn.no_grad():
                out = model(x_hat, M).imputed.data
            if not np.array_equal(out[M == 1], x_hat[M == 1]):
                violations += 1
    ok = report(4, violations == 0,
                f"100 batches x {len(models)} variants, {violations} with observed values altered")
    assert ok


# 5 -------------------------------------------------------------------------------

def test_05_ort_only_curve_signature(report, desk):
    start = time.perf_counter()
    ort = desk.run("transformer_ort_only", 0).curve
    joint = desk.run("transformer", 0).curve
    elapsed = time.perf_counter() - start
    ort_imp, joint_imp = ort.rows[-1][2], joint.rows[-1][2]
    ort_rec, joint_rec = ort.rows[-1][3], joint.rows[-1][3]
    gap = ort_imp / joint_imp - 1.0
    ok = report(5, gap >= 0.20 and ort_rec <= joint_rec and elapsed < 900,
                f"final val imputation MAE ORT-only {ort_imp:.4f} vs ORT+MIT {joint_imp:.4f} (+{gap:.0%}); "
                f"reconstruction MAE {ort_rec:.4f} vs {joint_rec:.4f}; "
                f"{len(ort)} / {len(joint)} epochs, {elapsed:.0f}s")
    assert ok


# 6 -------------------------------------------------------------------------------

def test_06_baseline_dominance(report, desk):
    start = time.perf_counter()
    wins, details = 0, []
    for seed in SEEDS:
        ds = desk.dataset(seed)
        saits_mae = desk.run("saits", seed).state.best_mae
        ort_mae = desk.run("transformer_ort_only", seed).state.best_mae
        med = evaluate_method(baseline_median(ds), ds, "median", "val").standardized.mae
        last = evaluate_method(baseline_last(ds), ds, "last", "val").standardized.mae
        won = saits_mae < med and saits_mae < last and saits_mae < ort_mae
        wins += won
        details.append(f"seed {seed}: saits {saits_mae:.4f} median {med:.4f} last {last:.4f} "
                       f"ort-only {ort_mae:.4f}")
    elapsed = time.perf_counter() - start
    ok = report(6, wins >= 2, f"{wins}/3 seeds strictly better ({elapsed:.0f}s incl. shared runs); "
                + "; ".join(details))
    assert ok


# 7 -------------------------------------------------------------------------------

def test_07_ablation_direction(report, desk):
    base, nodiag = [], []
    for seed in SEEDS:
        ds = desk.dataset(seed)
        for variant, bucket in (("saits", base), ("saits_no_diag", nodiag)):
            model = desk.run(variant, seed).model
            fill = impute(model, ds.test.X, ds.test.M)
            bucket.append(evaluate_method(fill, ds, variant, "test").standardized.mae)
    mb, mn = float(np.mean(base)), float(np.mean(nodiag))
    ok = report(7, mb <= mn,
                f"mean test holdout MAE saits {mb:.4f} vs saits_no_diag {mn:.4f} "
                f"(per seed {[round(v, 4) for v in base]} vs {[round(v, 4) for v in nodiag]})")
    assert ok


# 8 -------------------------------------------------------------------------------

def _loop_metrics(est, tgt, mask):
    abs_sum = sq_sum = tgt_sum = n = 0.0
    for e, t, m in zip(est.ravel(), tgt.ravel(), mask.ravel()):
        if m:
            abs_sum += abs(e - t)
            sq_sum += (e - t) * (e - t)
            tgt_sum += abs(t)
            n += 1
    return abs_sum / n, math.sqrt(sq_sum / n), abs_sum / tgt_sum, sq_sum / n


def test_08_metric_oracles(report):
    rng = np.random.default_rng(8)
    worst, rmse_ok = 0.0, True
    for _ in range(1000):
        shape = tuple(int(s) for s in rng.integers(1, 7, size=3))
        est = rng.normal(scale=rng.uniform(0.1, 10), size=shape)
        tgt = rng.normal(scale=rng.uniform(0.1, 10), size=shape)
        mask = (rng.random(shape) < rng.uniform(0.1, 1.0)).astype(float)
        mask.reshape(-1)[rng.integers(mask.size)] = 1.0
        got = metrics(est, tgt, mask)
        want = _loop_metrics(est, tgt, mask)
        worst = max(worst, max(abs(a - b) for a, b in zip((got.mae, got.rmse, got.mre, got.mse), want)))
        rmse_ok &= got.rmse >= got.mae
    ok = report(8, worst <= 1e-12 and rmse_ok,
                f"1000 instances, max |metric - loop oracle| {worst:.1e}, RMSE >= MAE: {rmse_ok}")
    assert ok


# 9 -------------------------------------------------------------------------------

def test_09_masking_algebra(report):
    rng = np.random.default_rng(9)
    bad = 0
    for _ in range(10_000):
        shape = tuple(int(s) for s in rng.integers(1, 6, size=3))
        M = (rng.random(shape) < rng.uniform(0.05, 1.0)).astype(float)
        M.reshape(-1)[rng.integers(M.size)] = 1.0
        rate = float(rng.uniform(1e-3, 1 - 1e-3))
        X = rng.normal(size=shape)
        _, m_hat, ind = apply_mit_mask(X, M, rate, rng)
        expected = max(1, math.floor(rate * M.sum() + 0.5))
        if not (np.array_equal(ind + m_hat, M) and not np.any(ind * m_hat)
                and ind.sum() == expected and np.all(M[ind == 1] == 1)):
            bad += 1
    assert masked_count(0.25, 2) == 1 and masked_count(0.5, 3) == 2
    ok = report(9, bad == 0, f"10^4 (M, rate) draws, {bad} violations")
    assert ok


# 10 ------------------------------------------------------------------------------

def test_10_determinism(report, tmp_path):
    ds = synth_generate("sine_mixture", 96, 12, 4, MISSING, seed=10)
    cfg = tiny(12, 4)
    files = []
    for run in ("a", "b"):
        res = train(cfg, ds, patience=5, max_epochs=8, batch_size=32, seed=10)
        res.curve.to_csv(tmp_path / f"curves_{run}.csv")
        save_checkpoint(res.state, tmp_path / f"ck_{run}.bin")
        files.append(res)
    same_curves = (tmp_path / "curves_a.csv").read_bytes() == (tmp_path / "curves_b.csv").read_bytes()
    same_ck = (tmp_path / "ck_a.bin").read_bytes() == (tmp_path / "ck_b.bin").read_bytes()
    before = impute(files[0].model, ds.test.X, ds.test.M)
    loaded, _ = load_checkpoint(tmp_path / "ck_a.bin")
    after = impute(loaded, ds.test.X, ds.test.M)
    round_trip = np.array_equal(before, after)
    ok = report(10, same_curves and same_ck and round_trip,
                f"curves.csv identical: {same_curves}; checkpoints identical: {same_ck}; "
                f"save-load-forward bit-exact: {round_trip}")
    assert ok
