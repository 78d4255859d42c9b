"""Model-based random forests for personalised treatment effects.

Parametric base models (a linear Gaussian model, a Gaussian model with
log link and offset, and a Weibull accelerated failure time model) are
recursively partitioned by score-based independence tests.  The trees
are combined into a forest whose similarity weights give every subject
a personalised, re-fitted model.
"""

from .data import Dataset, load_dataset, write_dataset
from .errors import DataError, NumericalError, PMForestError
from .forest import Forest, ForestConfig, fit_forest, load_forest, save_forest, weight_matrix
from .importance import ImportanceReport, variable_importance
from .inference import BootstrapTestResult, improvement_test, mode_comparison
from .model_core import (
    DataView,
    Family,
    FittedParams,
    delta_median,
    fit_weighted,
    loglik_contributions,
    score_matrix,
    weibull_quantile,
)
from .personalise import (
    Personalised,
    dependence_data,
    forest_loglik,
    personalise_new,
    personalise_training,
    personalised_params,
)
from .simulate import SimTruth, simulate_appendix_b, simulate_pair
from .split_engine import PartitionColumn, SplitMode, best_split_point, variable_test
from .tree import GrowConfig, grow_tree

__version__ = "0.1.0"

__all__ = [
    "Dataset", "load_dataset", "write_dataset",
    "DataError", "NumericalError", "PMForestError",
    "Forest", "ForestConfig", "fit_forest", "load_forest", "save_forest", "weight_matrix",
    "ImportanceReport", "variable_importance",
    "BootstrapTestResult", "improvement_test", "mode_comparison",
    "DataView", "Family", "FittedParams", "delta_median", "fit_weighted",
    "loglik_contributions", "score_matrix", "weibull_quantile",
    "Personalised", "dependence_data", "forest_loglik", "personalise_new",
    "personalise_training", "personalised_params",
    "SimTruth", "simulate_appendix_b", "simulate_pair",
    "PartitionColumn", "SplitMode", "best_split_point", "variable_test",
    "GrowConfig", "grow_tree",
]
