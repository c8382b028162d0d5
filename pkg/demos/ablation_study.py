"""
Ablation: what the diagonal mask and the second block buy
=========================================================

Train several architecture variants on the same data with the same seed
and print one comparison table.  At desk scale the differences are small and
can flip between seeds; average several seeds before drawing conclusions.
"""

import numpy as np

from saits import synth_generate, tiny, train
from saits.evaluate import evaluate_method
from saits.training import impute

VARIANTS = ["saits", "saits_no_diag", "saits_1block", "saits_residual"]
SEEDS = [0, 1]
EPOCHS = 80

table = {v: [] for v in VARIANTS}
for seed in SEEDS:
    ds = synth_generate("sine_mixture", n=384, T=24, D=8, missing_rate=0.1, seed=seed)
    for variant in VARIANTS:
        res = train(tiny(ds.T, ds.D, variant=variant), ds, max_epochs=EPOCHS, patience=30, seed=seed)
        fill = impute(res.model, ds.test.X, ds.test.M)
        m = evaluate_method(fill, ds, variant, "test").standardized
        table[variant].append((m.mae, m.rmse, m.mre))
        print(f"seed {seed} {variant:<15} MAE {m.mae:.4f}")

print()
print(f"{'variant':<16}{'MAE':>8}{'RMSE':>8}{'MRE':>9}")
for variant, rows in table.items():
    mae, rmse, mre = np.mean(rows, axis=0)
    print(f"{variant:<16}{mae:>8.4f}{rmse:>8.4f}{mre:>9.2%}")
