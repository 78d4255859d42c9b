"""Permutation variable importance from out-of-bag tree log-likelihoods."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NoOOBError
from .forest import Forest
from .model_core import DataView
from .tree import split_variables, tree_oob_loglik


@dataclass(frozen=True)
class ImportanceReport:
    names: tuple
    vi: np.ndarray
    n_trees_used: int
    permutation_seed: int
    per_tree: np.ndarray  # (T, J) differences l_t - l_t^(j)

    def ranked(self) -> list:
        """``(name, VI, rank)`` rows, most important first."""
        order = np.argsort(-self.vi, kind="mergesort")
        return [(self.names[j], float(self.vi[j]), r + 1) for r, j in enumerate(order)]


def _tree_drops(forest, t, data, partition, seed, repetitions):
    tree = forest.trees[t]
    oob = forest.oob_rows[t]
    drops = np.zeros(len(partition))
    if len(oob) == 0:
        return drops, False
    base = tree_oob_loglik(tree, data, partition, oob)
    for j in sorted(split_variables(tree)):
        total = 0.0
        for r in range(repetitions):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t, j, r)))
            values = partition[j].values.copy()
            values[oob] = values[oob][rng.permutation(len(oob))]
            permuted = list(partition)
            permuted[j] = partition[j].with_values(values)
            total += base - tree_oob_loglik(tree, data, permuted, oob)
        drops[j] = total / repetitions
    return drops, True


def variable_importance(forest: Forest, data: DataView, partition: list, seed: int = 0,
                        repetitions: int = 1, threads: int = 1) -> ImportanceReport:
    """Mean over all trees of the out-of-bag log-likelihood drop after
    permuting one variable among the out-of-bag rows.

    Trees that never split on a variable contribute exactly zero for it,
    and the mean always divides by the total number of trees.
    """
    forest.check_columns(partition)
    if all(len(o) == 0 for o in forest.oob_rows):
        raise NoOOBError("every out-of-bag set is empty")

    def one(t):
        return _tree_drops(forest, t, data, partition, seed, repetitions)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(forest.n_trees)))
    else:
        out = [one(t) for t in range(forest.n_trees)]
    per_tree = np.array([d for d, _ in out])
    used = sum(ok for _, ok in out)
    return ImportanceReport(tuple(c.name for c in partition), per_tree.mean(axis=0),
                            int(used), seed, per_tree)
