# %% [markdown]
# Short fit on the one-bar images (rows read as timesteps), then a look at
# which loading columns the prox step switched off.

# %%
import numpy as np

from dlgfa import evaluation as ev
from dlgfa.data import SplitSpec, generate_one_bar, split_dataset
from dlgfa.model import ModelConfig
from dlgfa.optim import OptimConfig, fit

ds = generate_one_bar(400, size=6, noise_sd=0.05, seed=1)
train, val, test = split_dataset(ds, SplitSpec(seed=0))
mc = ModelConfig(K=4, H=16, p=1, T=6, group_spec=ds.group_spec)
oc = OptimConfig(lam=5.0, lr_adam=1e-2, lr_prox=1e-3, batch_size=32, max_epochs=30, seed=0)
model, history = fit(train, mc, oc)

# %%
print("final objective", round(history.epochs[-1].objective, 2))
print("test mse", round(ev.mse_test(model, test), 4))

# %%
rep = ev.sparsity_report(model)
print(f"zero columns: {rep.zero_fraction:.0%}")
t = rep.T
print(ev.format_table(["group"] + [f"z{k + 1}" for k in range(rep.K)],
                      [(name, *np.round(row, 3)) for name, row in zip(rep.group_names, rep.norms[t - 1])]))

# %%
for k, ranked in ev.top_features_per_factor(rep, t, top_k=2).factors.items():
    print(f"z{k}:", ranked)
