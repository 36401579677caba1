# %% [markdown]
# Gradient check for a tiny tanh network built on the tape autodiff.

# %%
import numpy as np

from dlgfa import autodiff as ad

rng = np.random.default_rng(0)
store = ad.ParamStore()
W1 = store.add("W1", rng.normal(size=(4, 3)) * 0.5)
b1 = store.add("b1", np.zeros(4))
W2 = store.add("W2", rng.normal(size=(1, 4)) * 0.5)
x = rng.normal(size=(5, 3))


def loss():
    h = ad.tanh(ad.affine(x, W1, b1))
    return ad.sum(ad.square(ad.einsum("ij,bj->bi", W2, h)))


# %%
err = ad.finite_diff_check(loss, store)
print(f"max relative error vs central differences: {err:.2e}")
