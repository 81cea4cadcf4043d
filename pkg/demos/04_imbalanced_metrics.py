"""Why plain accuracy misleads on skewed behavior data, and what the
cost-sensitive loss changes.

A majority-only predictor on a 75/14/11 split is 75% accurate yet useless;
the geometric mean of recall and specificity, and the index of balanced
accuracy, both collapse to ~0 for it. The cost matrix derived from class
counts reweights the loss so rare responses matter proportionally.
"""

import numpy as np

from driversight import (
    Tensor,
    confusion,
    cost_sensitive_loss,
    default_cost_matrix,
    metric_report,
    uniform_cost_matrix,
)

rng = np.random.default_rng(0)

print("-- a majority-only predictor --")
truths = np.concatenate([np.zeros(75), np.ones(14), np.full(11, 2)]).astype(int)
majority = np.zeros(100, dtype=int)
m = confusion(truths, majority, 3)
rep = metric_report(m)
accuracy = np.trace(m) / m.sum()
print(f"  accuracy = {accuracy:.2f}  but macro G-mean = {rep.macro['g_mean']:.3f}, "
      f"macro IBA = {rep.macro['iba']:.3f}")

print("\n-- a balanced predictor that errs sometimes --")
decent = truths.copy()
flip = rng.choice(100, size=12, replace=False)
decent[flip] = (decent[flip] + 1) % 3
rep2 = metric_report(confusion(truths, decent, 3))
print(f"  macro G-mean = {rep2.macro['g_mean']:.3f}, macro IBA = {rep2.macro['iba']:.3f}")
print("  per-class recall:", np.round(rep2.per_class['recall'], 3))

print("\n-- cost matrix from the observed response counts 1730/319/264 --")
costs = default_cost_matrix([1730, 319, 264])
print("  off-diagonal row weights:", np.round(costs.class_weights(), 4))

probs = Tensor(np.array([[0.55, 0.30, 0.15]]))
for label, name in ((0, "majority"), (2, "rarest")):
    weighted = cost_sensitive_loss(probs, [label], costs).item()
    plain = cost_sensitive_loss(probs, [label], uniform_cost_matrix(3)).item()
    print(f"  same prediction, true class {name}: plain CE {plain:.3f} -> weighted {weighted:.3f}")
print("  misclassifying the rare class costs ~6.6x more, shifting the decision boundary")
