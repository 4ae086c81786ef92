"""Post-selection inference by sample splitting.

Select a model on one random half of the data, then use the other half to
estimate and cover four random targets: the projection coefficients of the
selected variables, leave-one-covariate-out (LOCO) importance, its median
variant, and the expected absolute prediction error.  Confidence sets come
from Normal approximations, the pairs bootstrap, or the image bootstrap.
"""

from .core import Dataset, DataSplit, SeededRng, load_csv, math, split, vech

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DataSplit",
    "SeededRng",
    "load_csv",
    "math",
    "split",
    "vech",
]
