"""Regression trees for multiresponse and longitudinal data.

Split variables are chosen by chi-squared tests of residual sign patterns,
which keeps selection free of bias toward variables with many split points
or few missing values.  Trees are pruned by cross-validated
cost-complexity pruning.
"""

from .dataset import Dataset, DatasetError, load_csv, read_roles
from .stats import Curve, chisq_pvalue, chisq_test, lowess
from .tree import GrowConfig, Tree, cross_validate, deserialize, grow, prune_sequence, serialize

__all__ = [
    "Curve",
    "Dataset",
    "DatasetError",
    "GrowConfig",
    "Tree",
    "chisq_pvalue",
    "chisq_test",
    "cross_validate",
    "deserialize",
    "grow",
    "load_csv",
    "lowess",
    "prune_sequence",
    "read_roles",
    "serialize",
]
__version__ = "0.1.0"
