"""
The perturbation pool
=====================

Each iteration one network gets an aggressively transformed batch. This
script applies every transform in the pool to a toy image batch and
prints what changed.
"""

import numpy as np

from compdistill.losses import one_hot
from compdistill.perturb import KINDS, stochastic_perturb

rng = np.random.default_rng(0)

# four 8x8 single-channel "images", each a distinct diagonal stripe pattern
x = np.zeros((4, 1, 8, 8))
for i in range(4):
    x[i, 0] = np.eye(8, k=i - 2)
y = one_hot([0, 1, 2, 3], 4)

# %%
for kind in KINDS:
    out, y2, ev = stochastic_perturb(x, y, kind, rng)
    print(f"--- {kind}: {ev.params_dict()}")
    print("sample 0 after transform:")
    print(np.array2string(out[0, 0], precision=1, suppress_small=True, max_line_width=120))
    print("label rows:", np.round(y2, 3).tolist())

# %%
# Mixing transforms keep label rows on the simplex.
sums = [stochastic_perturb(x, y, k, rng)[1].sum(axis=1) for k in ("fusion", "splice") for _ in range(100)]
print("max |row sum - 1| over 200 mixed batches:", float(np.max(np.abs(np.concatenate(sums) - 1))))
