"""Prediction error of one tree per response, one multivariate tree, and the baseline.

Three simulated settings with seven uniform predictors:
  1. each response depends on its own predictor;
  2. all responses share the same signal X1 + X2;
  3. the response vector flips with the sign of X1 * X2.
A few trials give the ordering; the acceptance suite runs 200.
"""

import sys

from mvguide.simharness import ScenarioSpec, mse_experiment

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 10
for eq in (1, 2, 3):
    rep = mse_experiment(ScenarioSpec(f"indep_uniform_{eq}", 100, seed=eq), trials)
    print(rep.to_text())
