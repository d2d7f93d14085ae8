"""Grouping subjects by the shape of their trajectories.

Simulated subjects are observed at ten times; their mean path steps up by
2.5 when X1 <= 0.  The tree splits subjects (not observations) and each
leaf carries a lowess curve.
"""

import numpy as np

from mvguide import cross_validate
from mvguide.simharness import ScenarioSpec, gen_scenario

ds, truth = gen_scenario(ScenarioSpec("long_step", 200, seed=3))
tree = cross_validate(ds, folds=10, seed=3)
print(tree.to_text())

for leaf in tree.terminals():
    print(f"node {leaf.id}: fitted curve at u = 1, 5, 10 ->", np.round(leaf.curve([1.0, 5.0, 10.0]), 2))
x_left = np.array([[-0.5, 0, 0, 0, 0]])
x_right = np.array([[0.5, 0, 0, 0, 0]])
print("true means at u = 1, 5, 10:")
print("  X1 <= 0:", [float(truth(x_left, u)[0]) for u in (1.0, 5.0, 10.0)])
print("  X1 >  0:", [float(truth(x_right, u)[0]) for u in (1.0, 5.0, 10.0)])
