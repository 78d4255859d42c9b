"""Personalised model re-fits and the summaries built on them."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, SchemaMismatchError, UnknownVariableError
from .forest import Forest, leaf_matrix, weight_matrix
from .model_core import (
    DataView,
    Family,
    FittedParams,
    delta_median,
    fit_weighted,
    loglik_rowwise,
)


@dataclass(frozen=True)
class PersonalisedEstimate:
    subject: object
    theta_hat: FittedParams
    effect: float
    delta_median: float | None
    total_weight: int
    degenerate: bool = False


@dataclass(frozen=True)
class Personalised:
    """Personalised estimates for a batch of subjects, column oriented."""

    subjects: np.ndarray
    theta: np.ndarray
    effect: np.ndarray
    delta_median: np.ndarray | None
    total_weight: np.ndarray
    degenerate: np.ndarray
    family: Family
    params: tuple

    def __len__(self):
        return len(self.subjects)

    def estimate(self, i: int) -> PersonalisedEstimate:
        dm = None if self.delta_median is None else float(self.delta_median[i])
        return PersonalisedEstimate(self.subjects[i], self.params[i], float(self.effect[i]),
                                    dm, int(self.total_weight[i]), bool(self.degenerate[i]))


@dataclass(frozen=True)
class DependenceTable:
    variable: str
    kind: str
    effect_kind: str
    columns: tuple
    rows: list


def _refit(family, data, base, weights):
    try:
        return fit_weighted(family, data, weights), False
    except NumericalError:
        return base, True


def _batch(forest: Forest, data: DataView, weights: np.ndarray, subjects, base, threads):
    family = forest.family
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(lambda w: _refit(family, data, base, w), weights))
    else:
        fits = [_refit(family, data, base, w) for w in weights]
    params = tuple(p for p, _ in fits)
    theta = np.array([p.theta for p in params]).reshape(len(params), family.n_params)
    dm = None
    if family is Family.WEIBULL_AFT:
        dm = np.array([delta_median(p) for p in params])
    return Personalised(
        subjects=np.asarray(subjects),
        theta=theta,
        effect=theta[:, family.beta_index].copy(),
        delta_median=dm,
        total_weight=weights.sum(axis=1),
        degenerate=np.array([d for _, d in fits], dtype=bool),
        family=family,
        params=params,
    )


def personalise_training(forest: Forest, data: DataView, base: FittedParams | None = None,
                         threads: int = 1) -> Personalised:
    """Out-of-bag personalised models for every training subject."""
    if len(data) != forest.n_rows:
        raise SchemaMismatchError("data do not have the forest's training row count")
    if base is None:
        base = fit_weighted(forest.family, data)
    ids = np.arange(forest.n_rows)
    w = weight_matrix(forest, forest.train_leaves, oob_for=ids)
    return _batch(forest, data, w, ids, base, threads)


def personalise_new(forest: Forest, data: DataView, query_partition: list,
                    base: FittedParams | None = None, threads: int = 1,
                    subjects=None) -> Personalised:
    """Personalised models for new rows, using all trees."""
    if base is None:
        base = fit_weighted(forest.family, data)
    q = leaf_matrix(forest, query_partition)
    w = weight_matrix(forest, q)
    if subjects is None:
        subjects = np.arange(q.shape[1])
    return _batch(forest, data, w, subjects, base, threads)


def personalised_params(forest: Forest, data: DataView, target,
                        base: FittedParams | None = None) -> PersonalisedEstimate:
    """Personalised model for one subject.

    ``target`` is a training row index (out-of-bag weights) or a list of
    single-row partition columns describing a new subject (all trees).
    """
    if isinstance(target, (int, np.integer)):
        if base is None:
            base = fit_weighted(forest.family, data)
        w = weight_matrix(forest, forest.train_leaves[:, [int(target)]], oob_for=[int(target)])
        return _batch(forest, data, w, [int(target)], base, 1).estimate(0)
    return personalise_new(forest, data, target, base).estimate(0)


def forest_loglik(forest: Forest, data: DataView, personalised: Personalised | None = None,
                  threads: int = 1) -> float:
    """Sum of each subject's contribution under its own out-of-bag model."""
    if personalised is None:
        personalised = personalise_training(forest, data, threads=threads)
    return float(np.sum(forest_contributions(data, personalised)))


def forest_contributions(data: DataView, personalised: Personalised) -> np.ndarray:
    return loglik_rowwise(personalised.family, personalised.theta, data)


def _effect_values(personalised: Personalised, effect_kind: str) -> np.ndarray:
    if effect_kind == "beta":
        return personalised.effect
    if effect_kind in ("delta_median", "delta-median"):
        if personalised.delta_median is None:
            raise SchemaMismatchError("median survival difference needs the Weibull model")
        return personalised.delta_median
    raise ValueError(f"unknown effect kind {effect_kind!r}")


def dependence_data(forest: Forest, data: DataView, partition: list, variable: str,
                    effect_kind: str = "beta", personalised: Personalised | None = None
                    ) -> DependenceTable:
    """Per-subject effects against one partitioning variable.

    Numeric variables give ``(z, effect)`` pairs sorted by ``z``
    (missing ``z`` last).  Categorical variables give one boxplot
    summary row per level.
    """
    names = [c.name for c in partition]
    if variable not in names:
        raise UnknownVariableError(f"unknown partitioning variable {variable!r}")
    col = partition[names.index(variable)]
    if personalised is None:
        personalised = personalise_training(forest, data)
    effect = _effect_values(personalised, effect_kind)
    kind = "delta_median" if effect_kind != "beta" else "beta"
    if col.kind == "numeric":
        order = np.argsort(col.values, kind="mergesort")
        rows = [(float(col.values[i]), float(effect[i])) for i in order]
        return DependenceTable(variable, "numeric", kind, ("z", "effect"), rows)
    rows = []
    groups = [(str(lab), col.values == k) for k, lab in enumerate(col.levels)]
    if np.any(col.missing):
        groups.append(("NA", col.missing))
    for label, mask in groups:
        e = effect[mask]
        if len(e):
            q1, med, q3 = np.quantile(e, [0.25, 0.5, 0.75])
            rows.append((label, int(len(e)), float(e.mean()), float(q1), float(med), float(q3)))
        else:
            nan = float("nan")
            rows.append((label, 0, nan, nan, nan, nan))
    return DependenceTable(variable, "categorical", kind,
                           ("level", "n", "mean", "q25", "median", "q75"), rows)


def effect_distribution(personalised: Personalised) -> dict:
    """Raw per-subject effects (and baseline parameters for Weibull)."""
    out = {"subject": personalised.subjects, "beta": personalised.effect}
    if personalised.family is Family.WEIBULL_AFT:
        out["alpha1"] = personalised.theta[:, 0]
        out["alpha2"] = np.exp(personalised.theta[:, 2])
    else:
        out["alpha"] = personalised.theta[:, 0]
    return out
