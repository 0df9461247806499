"""
Who teaches whom
================

Two MLPs of different width train on noisy Gaussian blobs. Each
mini-batch, the network with the lower classification loss is the
teacher. This script trains one cohort and prints how the teacher role
moves between the two networks.
"""

import numpy as np

from compdistill import cohort as C
from compdistill.config import RunConfig, Seeds
from compdistill.data import make_blobs

# 4 classes, 16 dims, 20% of training labels flipped at random
train, test = make_blobs(3000, 4, 16, 0.6, seed=0, label_noise=0.2)

cfg = RunConfig(cohort=[{"hidden": [64]}, {"hidden": [256]}], epochs=10, seeds=Seeds(0, 0, 0))
report = C.train(cfg, train, test)

# %%
# The teacher index per iteration. A single permanent teacher would mean
# no competition at all.
teachers = np.array([s.teacher for s in report.steps])
print("iterations:", report.iterations)
print("teacher share per net:", np.bincount(teachers, minlength=2) / len(teachers))
print("teacher switches:", report.teacher_switches)

# %%
# Per-epoch share of iterations where the wide net was teacher.
per_epoch = np.array_split(teachers, cfg.epochs)
for e, chunk in enumerate(per_epoch, 1):
    bar = "#" * int(40 * chunk.mean())
    print(f"epoch {e:2d}  {chunk.mean():.2f}  {bar}")

# %%
# Test accuracy after each epoch (epoch 0 is before training).
for e, accs in enumerate(report.acc_history):
    print(f"epoch {e:2d}  " + "  ".join(f"{a:6.2f}" for a in accs))
