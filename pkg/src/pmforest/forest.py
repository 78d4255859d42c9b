"""Forests of model-based trees, similarity weights and JSON storage."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import RootFitFailedError, UnknownSchemaError
from .model_core import DataView, Family, FittedParams, fit_weighted
from .split_engine import SplitMode, SplitSpec
from .tree import GrowConfig, Internal, Leaf, grow_tree, predict_leaves

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    """Ensemble settings.

    ``weight_mode="all"`` counts co-membership over every training row
    in every tree; ``"learning"`` only counts rows inside the learning
    subsample of the tree in question.
    """

    n_trees: int = 100
    subsample_fraction: float = 0.632
    seed: int = 0
    weight_mode: str = "all"

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.weight_mode not in ("all", "learning"):
            raise ValueError("weight_mode must be 'all' or 'learning'")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "subsample_fraction": self.subsample_fraction,
            "seed": self.seed,
            "weight_mode": self.weight_mode,
        }


def column_schema(partition) -> list:
    return [
        {"name": c.name, "kind": c.kind, "levels": [str(v) for v in c.levels]}
        for c in partition
    ]


@dataclass
class Forest:
    family: Family
    trees: list
    subsample_rows: list
    oob_rows: list
    grow_cfg: GrowConfig
    forest_cfg: ForestConfig
    schema: list
    n_rows: int
    train_leaves: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.schema, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def variable_names(self) -> list:
        return [c["name"] for c in self.schema]

    def check_columns(self, partition) -> None:
        if column_schema(partition) != self.schema:
            raise UnknownSchemaError(
                f"partitioning columns do not match forest schema {self.fingerprint}"
            )

    def attach_training(self, partition) -> None:
        """Recompute the cached training leaf memberships."""
        self.check_columns(partition)
        if len(partition[0].values) != self.n_rows:
            raise UnknownSchemaError("training columns have the wrong number of rows")
        self.train_leaves = leaf_matrix(self, partition)

    def oob_matrix(self) -> np.ndarray:
        """``(T, N)`` boolean table, True where row i is out-of-bag for tree t."""
        out = np.zeros((self.n_trees, self.n_rows), dtype=bool)
        for t, rows in enumerate(self.oob_rows):
            out[t, rows] = True
        return out


def _tree_seeds(seed: int, t: int):
    subsample = np.random.SeedSequence(seed, spawn_key=(t, 0))
    growth = np.random.SeedSequence(seed, spawn_key=(t, 1))
    return subsample, growth


def fit_forest(
    family: Family,
    data: DataView,
    partition: list,
    grow_cfg: GrowConfig = GrowConfig(),
    forest_cfg: ForestConfig = ForestConfig(),
    threads: int = 1,
) -> Forest:
    """Grow ``n_trees`` trees, each on a subsample drawn without replacement."""
    family = Family(family)
    n = len(data)
    m = int(np.floor(forest_cfg.subsample_fraction * n))
    if m < 2 * family.n_params:
        raise ValueError(f"subsample of {m} rows is too small")

    def one(t):
        sub_ss, grow_ss = _tree_seeds(forest_cfg.seed, t)
        rows = np.sort(np.random.default_rng(sub_ss).choice(n, size=m, replace=False))
        try:
            tree = grow_tree(family, data.take(rows),
                             [c.take(rows) for c in partition], grow_cfg, grow_ss)
        except RootFitFailedError:
            tree = None
        return rows, tree

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grown = list(pool.map(one, range(forest_cfg.n_trees)))
    else:
        grown = [one(t) for t in range(forest_cfg.n_trees)]

    if all(tree is None for _, tree in grown):
        raise RootFitFailedError("the base model could not be fitted in any tree")
    trees = []
    fallback = None
    for rows, tree in grown:
        if tree is None:
            if fallback is None:
                fallback = fit_weighted(family, data)
            tree = Leaf(0, fallback, len(rows))
        trees.append(tree)
    everyone = np.arange(n)
    subsamples = [rows for rows, _ in grown]
    oob = [np.setdiff1d(everyone, rows) for rows in subsamples]
    forest = Forest(family, trees, subsamples, oob, grow_cfg, forest_cfg,
                    column_schema(partition), n)
    forest.train_leaves = leaf_matrix(forest, partition)
    return forest


def leaf_matrix(forest: Forest, partition: list, rows=None) -> np.ndarray:
    """``(T, n)`` table of subgroup ids; entry ``(t, i)`` routes row i through tree t."""
    forest.check_columns(partition)
    return np.stack([predict_leaves(tree, partition, rows) for tree in forest.trees])


def weight_matrix(forest: Forest, query_leaves: np.ndarray, oob_for=None,
                  weight_mode: str | None = None) -> np.ndarray:
    """Similarity weights of many queries against all training rows.

    ``query_leaves`` is the ``(T, nq)`` leaf table of the queries.  With
    ``oob_for`` (training row ids, one per query) only trees for which
    that row is out-of-bag are counted.  Returns ``(nq, N)`` integers.
    """
    if forest.train_leaves is None:
        raise UnknownSchemaError("forest has no attached training data")
    mode = weight_mode or forest.forest_cfg.weight_mode
    query_leaves = np.asarray(query_leaves)
    nq = query_leaves.shape[1]
    w = np.zeros((nq, forest.n_rows), dtype=np.int64)
    query_oob = None
    if oob_for is not None:
        oob_for = np.asarray(oob_for, dtype=np.intp)
        query_oob = forest.oob_matrix()[:, oob_for]
    for t in range(forest.n_trees):
        same = query_leaves[t][:, None] == forest.train_leaves[t][None, :]
        if mode == "learning":
            learn = np.zeros(forest.n_rows, dtype=bool)
            learn[forest.subsample_rows[t]] = True
            same &= learn[None, :]
        if query_oob is not None:
            same &= query_oob[t][:, None]
        w += same
    return w


def similarity_weights(forest: Forest, z_query, oob_for: int | None = None,
                       weight_mode: str | None = None) -> np.ndarray:
    """Co-membership counts of one query with every training row.

    ``z_query`` is either a list of single-row partition columns matching
    the forest schema or, when ``oob_for`` is given and ``z_query`` is
    None, the training row itself.
    """
    if z_query is None:
        if oob_for is None:
            raise ValueError("either z_query or oob_for is required")
        q = forest.train_leaves[:, [oob_for]]
    else:
        q = leaf_matrix(forest, z_query)
        if q.shape[1] != 1:
            raise ValueError("similarity_weights takes a single query row")
    oob = None if oob_for is None else [oob_for]
    return weight_matrix(forest, q, oob, weight_mode)[0]


# --------------------------------------------------------------------- #
# serialisation
# --------------------------------------------------------------------- #


def _node_to_dict(node) -> dict:
    if isinstance(node, Leaf):
        p = node.params
        return {
            "leaf": node.subgroup_id,
            "n": node.n,
            "theta": [float(v) for v in p.theta],
            "sigma_hat": p.sigma_hat,
            "n_used": p.n_used,
            "converged": p.converged,
        }
    s = node.split
    split = {"variable": s.variable, "name": s.name, "kind": s.kind,
             "missing_route": s.missing_route, "statistic": s.statistic_c}
    if s.kind == "numeric":
        split["threshold"] = s.threshold
    else:
        split["left_levels"] = list(s.left_levels)
    return {"split": split, "left": _node_to_dict(node.left), "right": _node_to_dict(node.right)}


def _node_from_dict(d: dict, family: Family):
    if "leaf" in d:
        params = FittedParams(family, np.array(d["theta"], dtype=float), d["sigma_hat"],
                              d["n_used"], d["converged"])
        return Leaf(d["leaf"], params, d["n"])
    s = d["split"]
    split = SplitSpec(
        s["variable"], s["name"], s["kind"],
        threshold=s.get("threshold"),
        left_levels=tuple(s["left_levels"]) if "left_levels" in s else None,
        missing_route=s["missing_route"], statistic_c=s["statistic"],
    )
    return Internal(split, _node_from_dict(d["left"], family), _node_from_dict(d["right"], family))


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "family": forest.family.value,
        "grow_config": forest.grow_cfg.to_dict(),
        "forest_config": forest.forest_cfg.to_dict(),
        "schema": forest.schema,
        "n_rows": forest.n_rows,
        "subsamples": [[int(i) for i in rows] for rows in forest.subsample_rows],
        "trees": [_node_to_dict(tree) for tree in forest.trees],
    }


def forest_from_dict(d: dict) -> Forest:
    if d.get("format_version") != FORMAT_VERSION:
        raise UnknownSchemaError(f"unsupported forest format {d.get('format_version')!r}")
    family = Family(d["family"])
    gc = dict(d["grow_config"])
    gc["mode"] = SplitMode(gc["mode"])
    n = d["n_rows"]
    subs = [np.array(rows, dtype=np.intp) for rows in d["subsamples"]]
    everyone = np.arange(n)
    return Forest(
        family=family,
        trees=[_node_from_dict(t, family) for t in d["trees"]],
        subsample_rows=subs,
        oob_rows=[np.setdiff1d(everyone, rows) for rows in subs],
        grow_cfg=GrowConfig(**gc),
        forest_cfg=ForestConfig(**d["forest_config"]),
        schema=d["schema"],
        n_rows=n,
    )


def dumps(forest: Forest) -> str:
    return json.dumps(forest_to_dict(forest), separators=(",", ":"))


def loads(text: str) -> Forest:
    return forest_from_dict(json.loads(text))


def save_forest(forest: Forest, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(forest))


def load_forest(path) -> Forest:
    with open(path) as fh:
        return loads(fh.read())
