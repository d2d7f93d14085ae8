"""Which variable splits the root when no predictor is informative?

Each trial bootstraps the concrete data and permutes every predictor, so
all of them are noise.  An unbiased method picks each of the seven with
probability 1/7.  The exhaustive-search baseline favours a 20-category
noise column and avoids a variable with many missing values.
"""

import sys

from mvguide.concrete import load_clone
from mvguide.simharness import bias_experiment

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 500
ds = load_clone()

print(bias_experiment(ds, trials, seed=1, method="guide").to_text())
print(bias_experiment(ds, trials, seed=1, method="baseline", augment=(2, 20)).to_text())

full = bias_experiment(ds, trials, seed=1, method="baseline")
holed = bias_experiment(ds, trials, seed=1, method="baseline", missing=("fine", 0.8))
print(f"baseline picks 'fine' {full.frequency('fine'):.3f} of the time when complete,")
print(f"and {holed.frequency('fine'):.3f} with 80% of its values missing.")
