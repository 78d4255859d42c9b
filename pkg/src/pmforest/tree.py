"""Model-based trees grown by repeated fit, test and split cycles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import NoAdmissibleSplitError, NumericalError, RootFitFailedError
from .model_core import (
    DataView,
    Family,
    FittedParams,
    fit_weighted,
    loglik_contributions,
    score_matrix,
)
from .split_engine import (
    SplitMode,
    SplitSpec,
    best_split_point,
    maxstat_test,
    select_variable,
    variable_test,
)


@dataclass(frozen=True)
class GrowConfig:
    alpha: float = 0.05
    min_leaf: int = 20
    max_depth: int | None = None
    mtry: int | None = None  # None means ceil(sqrt(J))
    mode: SplitMode = SplitMode.BOTH
    mc_permutations: int | None = None
    test: str = "linear"  # or "maxstat"

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))
        if self.test not in ("linear", "maxstat"):
            raise ValueError("test must be 'linear' or 'maxstat'")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")

    def resolved_mtry(self, n_vars: int) -> int:
        m = math.ceil(math.sqrt(n_vars)) if self.mtry is None else self.mtry
        if not 1 <= m <= n_vars:
            raise ValueError(f"mtry={m} outside [1, {n_vars}]")
        return m

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "min_leaf": self.min_leaf,
            "max_depth": self.max_depth,
            "mtry": self.mtry,
            "mode": self.mode.value,
            "mc_permutations": self.mc_permutations,
            "test": self.test,
        }


@dataclass
class Leaf:
    subgroup_id: int
    params: FittedParams
    n: int


@dataclass
class Internal:
    split: SplitSpec
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Internal]


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _node_rng(base: np.random.SeedSequence, path: tuple) -> np.random.Generator:
    # keyed by node position so draws do not depend on the shape of the rest of the tree
    ss = np.random.SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + (3,) + path)
    return np.random.default_rng(ss)


@dataclass
class _Grower:
    family: Family
    data: DataView
    partition: list
    cfg: GrowConfig
    base_seed: np.random.SeedSequence
    mtry: int
    next_id: int = field(default=0)

    def leaf(self, params, n):
        node = Leaf(self.next_id, params, n)
        self.next_id += 1
        return node

    def grow(self, rows, depth, path, parent_params):
        node_data = self.data.take(rows)
        try:
            params = fit_weighted(self.family, node_data)
        except NumericalError as exc:
            if parent_params is None:
                raise RootFitFailedError(f"root model fit failed: {exc}") from exc
            return self.leaf(parent_params, len(rows))
        cfg = self.cfg
        n = len(rows)
        if n < 2 * cfg.min_leaf or (cfg.max_depth is not None and depth >= cfg.max_depth):
            return self.leaf(params, n)
        scores = score_matrix(params, node_data)
        rng = _node_rng(self.base_seed, path)
        candidates = np.sort(rng.choice(len(self.partition), size=self.mtry, replace=False))
        if cfg.test == "maxstat":
            results = [
                maxstat_test(
                    self.partition[j].take(rows), scores, cfg.mode, variable=int(j),
                    min_leaf=cfg.min_leaf, mc_permutations=cfg.mc_permutations, rng=rng,
                    beta_index=self.family.beta_index,
                )
                for j in candidates
            ]
        else:
            results = [
                variable_test(
                    self.partition[j].take(rows), scores, cfg.mode, variable=int(j),
                    mc_permutations=cfg.mc_permutations, rng=rng,
                    beta_index=self.family.beta_index,
                )
                for j in candidates
            ]
        chosen = select_variable(results, cfg.alpha, len(candidates))
        if chosen is None:
            return self.leaf(params, n)
        cols = cfg.mode.columns(self.family.n_params, self.family.beta_index)
        order_by = cols.index(self.family.beta_index) if self.family.beta_index in cols else 0
        col = self.partition[chosen].take(rows)
        try:
            split = best_split_point(col, scores[:, cols], cfg.min_leaf,
                                     variable=chosen, order_by=order_by)
        except NoAdmissibleSplitError:
            return self.leaf(params, n)
        go_left = split.goes_left(col.values)
        n_left = int(go_left.sum())
        if n_left < cfg.min_leaf or n - n_left < cfg.min_leaf:
            return self.leaf(params, n)
        left = self.grow(rows[go_left], depth + 1, path + (1,), params)
        right = self.grow(rows[~go_left], depth + 1, path + (2,), params)
        return Internal(split, left, right)


def grow_tree(
    family: Family,
    data: DataView,
    partition: list,
    cfg: GrowConfig = GrowConfig(),
    seed=0,
) -> TreeNode:
    """Grow one model-based tree on all rows of ``data``.

    ``partition`` holds one :class:`PartitionColumn` per variable, row
    aligned with ``data``.  The output depends only on the inputs and
    ``seed`` (an int or a ``numpy.random.SeedSequence``).
    """
    family = Family(family)
    if cfg.min_leaf < family.n_params + 1:
        raise ValueError(f"min_leaf must be at least {family.n_params + 1}")
    for col in partition:
        if len(col.values) != len(data):
            raise ValueError(f"column {col.name!r} is not row aligned with the data")
    grower = _Grower(family, data, list(partition), cfg, _as_seedseq(seed),
                     cfg.resolved_mtry(len(partition)))
    return grower.grow(np.arange(len(data)), 0, (), None)


# --------------------------------------------------------------------- #
# prediction
# --------------------------------------------------------------------- #


def predict_node(tree: TreeNode, z_row) -> int:
    """Subgroup id for one row of partitioning values (NaN = missing)."""
    node = tree
    while isinstance(node, Internal):
        value = np.array([z_row[node.split.variable]], dtype=float)
        node = node.left if node.split.goes_left(value)[0] else node.right
    return node.subgroup_id


def predict_leaves(tree: TreeNode, partition: list, rows=None) -> np.ndarray:
    """Vectorised :func:`predict_node` over rows of partitioning columns."""
    n = len(partition[0].values) if partition else 0
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.intp)
    out = np.empty(len(rows), dtype=np.intp)

    def route(node, pos):
        if len(pos) == 0:
            return
        if isinstance(node, Leaf):
            out[pos] = node.subgroup_id
            return
        values = partition[node.split.variable].values[rows[pos]]
        left = node.split.goes_left(values)
        route(node.left, pos[left])
        route(node.right, pos[~left])

    route(tree, np.arange(len(rows)))
    return out


def leaves(tree: TreeNode) -> list:
    """Leaves ordered by subgroup id."""
    found = []

    def walk(node):
        if isinstance(node, Leaf):
            found.append(node)
        else:
            walk(node.left)
            walk(node.right)

    walk(tree)
    return sorted(found, key=lambda leaf: leaf.subgroup_id)


def split_variables(tree: TreeNode) -> set:
    used = set()

    def walk(node):
        if isinstance(node, Internal):
            used.add(node.split.variable)
            walk(node.left)
            walk(node.right)

    walk(tree)
    return used


def depth(tree: TreeNode) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + max(depth(tree.left), depth(tree.right))


def n_splits(tree: TreeNode) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + n_splits(tree.left) + n_splits(tree.right)


def tree_loglik_contributions(tree: TreeNode, data: DataView, partition: list,
                              rows=None) -> np.ndarray:
    """Per-row contributions under the leaf model each row is routed to."""
    rows = np.arange(len(data)) if rows is None else np.asarray(rows, dtype=np.intp)
    out = np.zeros(len(rows))
    if len(rows) == 0:
        return out
    ids = predict_leaves(tree, partition, rows)
    for leaf in leaves(tree):
        sel = np.nonzero(ids == leaf.subgroup_id)[0]
        if len(sel):
            out[sel] = loglik_contributions(leaf.params, data.take(rows[sel]))
    return out


def tree_oob_loglik(tree: TreeNode, data: DataView, partition: list, oob_rows=None) -> float:
    """Sum of contributions of the given (out-of-bag) rows; 0 when empty."""
    return float(np.sum(tree_loglik_contributions(tree, data, partition, oob_rows)))
