"""Out-of-sample comparison and the synthetic-trial replicate pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset
from .forest import Forest, ForestConfig, fit_forest
from .importance import variable_importance
from .model_core import fit_weighted, loglik_contributions, loglik_rowwise
from .personalise import personalise_new
from .simulate import SimTruth, simulate_pair
from .tree import GrowConfig

# settings used for the synthetic-trial experiments
PRESET_GROW = GrowConfig(alpha=0.05, min_leaf=20, mtry=3, test="maxstat")
PRESET_FOREST = ForestConfig(n_trees=100, subsample_fraction=0.632)


def interaction_design(x, z1) -> np.ndarray:
    c = np.cos(z1)
    return np.column_stack([np.ones_like(x), x, c, x * c])


def fit_true_model(train: Dataset) -> np.ndarray:
    """Least-squares coefficients of the correctly specified interaction model."""
    view = train.view()
    design = interaction_design(view.treatment, train.columns["z1"])
    coef, *_ = np.linalg.lstsq(design, view.outcome, rcond=None)
    return coef


def evaluate_out_of_sample(forest: Forest, train: Dataset, test: Dataset,
                           truth: SimTruth | None = None, personalised=None,
                           threads: int = 1) -> dict:
    """Test-set log-likelihoods of the forest, the naive base model and,
    when ``truth`` is given, the correctly specified model.
    """
    train_view, test_view = train.view(), test.view()
    base = fit_weighted(forest.family, train_view)
    if personalised is None:
        personalised = personalise_new(forest, train_view, test.partition(), base=base,
                                       threads=threads)
    out = {
        "forest": float(np.sum(loglik_rowwise(forest.family, personalised.theta, test_view))),
        "naive": float(np.sum(loglik_contributions(base, test_view))),
    }
    if truth is not None:
        coef = fit_true_model(train)
        pred = interaction_design(test_view.treatment, test.columns["z1"]) @ coef
        out["true_model"] = float(-np.sum((test_view.outcome - pred) ** 2))
    return out


@dataclass(frozen=True)
class ReplicateResult:
    seed: int
    loglik: dict
    effect_cos_corr: float
    noise_spearman: np.ndarray
    vi: np.ndarray

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            **{f"loglik_{k}": v for k, v in self.loglik.items()},
            "effect_cos_corr": self.effect_cos_corr,
            "noise_spearman": [float(s) for s in self.noise_spearman],
            "vi": [float(v) for v in self.vi],
        }


def effect_recovery(personalised, test: Dataset, n_vars: int = 10) -> tuple[float, np.ndarray]:
    """Pearson correlation of the effects with ``cos(z1)`` and Spearman
    correlations with the noise variables ``z2 ... z_n_vars``.
    """
    effect = personalised.effect
    z = test.columns
    if np.std(effect) == 0:
        return 0.0, np.zeros(n_vars - 1)
    corr = float(np.corrcoef(effect, np.cos(z["z1"]))[0, 1])
    spear = np.array([stats.spearmanr(z[f"z{j}"], effect).statistic
                      for j in range(2, n_vars + 1)])
    return corr, spear


def appendix_b_replicate(seed: int, n: int = 600, amplitude: float = 3.0,
                         base_effect: float = 0.2, grow_cfg: GrowConfig = PRESET_GROW,
                         forest_cfg: ForestConfig = PRESET_FOREST,
                         threads: int = 1) -> ReplicateResult:
    """One learning/test pair: fit, evaluate, dependence and importance.

    ``seed`` drives the simulated samples, the forest and the importance
    permutations, matching ``simulate``, ``fit`` and ``evaluate`` on the
    command line with the same seed.
    """
    train, test, truth = simulate_pair(seed, n, amplitude, base_effect)
    forest_cfg = ForestConfig(forest_cfg.n_trees, forest_cfg.subsample_fraction,
                              seed=seed, weight_mode=forest_cfg.weight_mode)
    forest = fit_forest(train.family, train.view(), train.partition(), grow_cfg, forest_cfg,
                        threads)
    pers = personalise_new(forest, train.view(), test.partition(), threads=threads)
    ll = evaluate_out_of_sample(forest, train, test, truth, personalised=pers)
    corr, spear = effect_recovery(pers, test, truth.n_vars)
    vi = variable_importance(forest, train.view(), train.partition(), seed=seed,
                             threads=threads)
    return ReplicateResult(seed, ll, corr, spear, vi.vi)
