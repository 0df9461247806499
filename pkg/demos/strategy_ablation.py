"""
Independent, mutual and competitive
===================================

The same two-network cohort trained three ways, on identical data,
initial weights and batch order, averaged over three seeds:

* independent: each net learns from labels alone
* dml: every net imitates every other net
* competitive: the per-batch winner teaches the others, plus feature
  matching and one perturbed batch per iteration
"""

import numpy as np

from compdistill import cohort as C
from compdistill.config import RunConfig, Seeds
from compdistill.data import make_blobs

setups = {
    "independent": dict(strategy="independent", use_feature_loss=False, use_perturbation=False),
    "dml": dict(strategy="dml", use_feature_loss=False, use_perturbation=False),
    "competitive": dict(strategy="competitive"),
    "competitive, no L_F": dict(strategy="competitive", use_feature_loss=False),
    "competitive, no perturbation": dict(strategy="competitive", use_perturbation=False),
}

results = {name: [] for name in setups}
for seed in range(3):
    train, test = make_blobs(3000, 4, 16, 0.6, seed=seed, label_noise=0.2)
    for name, kw in setups.items():
        cfg = RunConfig(cohort=[{"hidden": [64]}, {"hidden": [256]}], epochs=20,
                        seeds=Seeds(seed, seed, seed), **kw)
        results[name].append(C.train(cfg, train, test, keep_steps=False).final_acc)

# %%
# Mean final test accuracy per net, and of the better net.
print(f"{'setup':30s}  {'net0':>6s}  {'net1':>6s}  {'best':>6s}")
for name, accs in results.items():
    accs = np.array(accs)
    print(f"{name:30s}  {accs[:, 0].mean():6.2f}  {accs[:, 1].mean():6.2f}  {accs.max(axis=1).mean():6.2f}")
