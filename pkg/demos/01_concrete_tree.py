"""Fit a multiresponse tree to concrete-mix data and read it.

Uses the bundled synthetic clone of the slump data (103 mixes, seven
ingredient amounts, three responses).  Pass the published file as the
first argument to use it instead.
"""

import sys

import numpy as np

from mvguide import GrowConfig, cross_validate
from mvguide.concrete import load_clone, load_uci_slump
from mvguide.design import design_from_dataset
from mvguide.selector import select_split_variable, sign_vectors_multi

ds = load_uci_slump(sys.argv[1]) if len(sys.argv) > 1 else load_clone()
print(f"{ds.n_rows} mixes, predictors {ds.names[:7]}, responses {ds.names[7:]}\n")

# Root node: every unit gets a sign vector (above/below each response mean),
# and each predictor is tested for association with those sign patterns.
design = design_from_dataset(ds, normalize=True)
units = np.arange(design.n_units)
sel = select_split_variable(design, units, sign_vectors_multi(design, units))
print("root-node chi-squared p-values:")
for name, p in sorted(sel.p_values.items(), key=lambda kv: kv[1]):
    print(f"  {name:<8} {p:.2e}")
print(f"selected: {sel.variable} (threshold 0.05/3 = {0.05 / 3:.4f})\n")

# Grow, then prune by ten-fold cross-validation on normalized responses.
tree = cross_validate(ds, GrowConfig(normalize=True), folds=10, seed=1)
print(tree.to_text())
print("pruning sequence (alpha, leaves, CV error):")
for step in tree.prune_table:
    print(f"  {step.alpha:10.4f} {step.n_leaves:4d} {step.cv_error:8.4f}")
