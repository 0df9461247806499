"""
Checking gradients by finite differences
========================================

All three losses are differentiated by hand. This script compares the
analytic gradients with central differences on a few random networks,
then shows what a broken backward pass looks like.
"""

from compdistill import gradcheck
from compdistill.nn import backward

for seed in range(3):
    res = gradcheck.run_gradcheck(seed)
    print(f"seed {seed}: " + "  ".join(f"{k}={v:.1e}" for k, v in res.items()))

# %%
# Drop the feature gradient: only the feature loss should be flagged.


def no_feature_grad(net, record, grad_logits, grad_feature=None):
    return backward(net, record, grad_logits, None)


res = gradcheck.run_gradcheck(0, backward_fn=no_feature_grad)
print("broken backward:", {k: f"{v:.1e}" for k, v in res.items()})
print("failing:", gradcheck.failing(res))
