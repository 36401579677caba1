# %% [markdown]
# Round-trip a dataset through the wide CSV format and sweep lambda.

# %%
import tempfile
from pathlib import Path

from dlgfa import evaluation as ev
from dlgfa.data import load_wide_csv, save_wide_csv, surrogate_dataset
from dlgfa.model import ModelConfig
from dlgfa.optim import OptimConfig

tmp = Path(tempfile.mkdtemp())
ds = surrogate_dataset(60, 5, [3, 2, 4], seed=0, names=["genes", "lipids", "clinical"])
save_wide_csv(ds, tmp / "cohort.csv")
print((tmp / "cohort.csv").read_text().splitlines()[0])
back = load_wide_csv(tmp / "cohort.csv")
print(back.sequences.shape, back.group_spec.names)

# %%
mc = ModelConfig(K=3, H=8, p=1, T=5, group_spec=back.group_spec)
oc = OptimConfig(lr_adam=1e-2, lr_prox=1e-2, batch_size=16, max_epochs=5, seed=0)
rows = ev.lambda_sweep(back, mc, oc, [0.0, 1.0, 10.0], workers=3)
print(ev.format_table(["lambda", "mse_val", "val_loglik", "zero_columns"],
                      [(r.lam, round(r.mse_val, 4), round(r.val_loglik, 1), r.zero_columns) for r in rows]))
