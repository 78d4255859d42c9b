"""Command-line front end.

Every subcommand writes its artifacts into ``--out`` (default ``.``).
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

A typical session on synthetic data::

    pmforest simulate --preset appendixB --seed 1 --out run
    pmforest fit --data run/train.csv --schema run/schema.json --config run/config.json \\
        --seed 1 --out run
    pmforest evaluate --forest run/forest.json --data run/train.csv \\
        --test run/test.csv --truth run/truth.json --out run
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset, write_csv, write_dataset, write_json
from .errors import DataError, NumericalError, PMForestError, SchemaError
from .evaluation import (
    PRESET_FOREST,
    PRESET_GROW,
    effect_recovery,
    evaluate_out_of_sample,
)
from .forest import Forest, ForestConfig, fit_forest, forest_from_dict, forest_to_dict
from .importance import variable_importance
from .inference import improvement_test
from .personalise import (
    dependence_data,
    effect_distribution,
    forest_loglik,
    personalise_new,
    personalise_training,
)
from .simulate import SimTruth, simulate_pair
from .split_engine import SplitMode
from .tree import GrowConfig

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
GROW_KEYS = ("alpha", "min_leaf", "max_depth", "mtry", "mode", "mc_permutations", "test")
FOREST_KEYS = ("n_trees", "subsample_fraction", "weight_mode")


# --------------------------------------------------------------------- #
# configuration and file helpers
# --------------------------------------------------------------------- #


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def load_config(path, seed: int) -> tuple[GrowConfig, ForestConfig]:
    """Grow and forest settings from a JSON file with ``grow`` and ``forest`` blocks."""
    cfg = _read_json(path) if path else {}
    grow = cfg.get("grow", {})
    forest = cfg.get("forest", {})
    unknown = (set(grow) - set(GROW_KEYS)) | (set(forest) - set(FOREST_KEYS))
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return GrowConfig(**grow), ForestConfig(seed=seed, **forest)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid config: {exc}") from exc


def preset_config() -> dict:
    grow = PRESET_GROW.to_dict()
    forest = PRESET_FOREST.to_dict()
    forest.pop("seed")
    return {"format_version": 1, "grow": grow, "forest": forest}


def save_forest_bundle(forest: Forest, ds: Dataset, path) -> None:
    """Forest JSON with the dataset schema embedded, so later commands need no schema."""
    d = forest_to_dict(forest)
    schema = ds.schema_config()
    # columns already filtered at fit time; keep them all when re-reading
    schema["drop_high_missing"] = False
    d["dataset_schema"] = schema
    Path(path).write_text(json.dumps(d, separators=(",", ":")) + "\n")


def load_forest_bundle(path) -> tuple[Forest, dict]:
    d = _read_json(path)
    try:
        forest = forest_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed forest file ({exc})") from exc
    schema = d.get("dataset_schema")
    if schema is None:
        raise SchemaError(f"{path} carries no dataset schema")
    return forest, schema


def _load_training(args) -> tuple[Forest, Dataset]:
    forest, schema = load_forest_bundle(args.forest)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = load_dataset(args.data, args.schema or schema)
    forest.attach_training(ds.partition())
    return forest, ds


def _load_query(path, schema) -> Dataset:
    return load_dataset(path, schema)


def _out(args, name) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


# --------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------- #


def cmd_simulate(args) -> None:
    if args.preset != "appendixB":
        raise DataError(f"unknown preset {args.preset!r}")
    train, test, truth = simulate_pair(args.seed, args.n, args.amplitude, args.base_effect)
    write_dataset(train, _out(args, "train.csv"), _out(args, "schema.json"))
    write_dataset(test, _out(args, "test.csv"))
    write_json(truth.to_dict(), _out(args, "truth.json"))
    write_json(preset_config(), _out(args, "config.json"))


def cmd_fit(args) -> None:
    ds = load_dataset(args.data, args.schema)
    grow_cfg, forest_cfg = load_config(args.config, args.seed)
    forest = fit_forest(ds.family, ds.view(), ds.partition(), grow_cfg, forest_cfg, args.threads)
    save_forest_bundle(forest, ds, _out(args, "forest.json"))


def _personalised(args, forest, ds):
    if args.new:
        query = _load_query(args.new, ds.schema_config())
        return personalise_new(forest, ds.view(), query.partition(), threads=args.threads), query
    return personalise_training(forest, ds.view(), threads=args.threads), ds


def cmd_personalise(args) -> None:
    forest, ds = _load_training(args)
    pers, _ = _personalised(args, forest, ds)
    names = list(forest.family.param_names)
    header = ["subject", *names, "effect"]
    if pers.delta_median is not None:
        header.append("delta_median")
    header += ["total_weight", "degenerate"]
    rows = []
    for i in range(len(pers)):
        row = [int(pers.subjects[i]), *pers.theta[i], pers.effect[i]]
        if pers.delta_median is not None:
            row.append(pers.delta_median[i])
        row += [int(pers.total_weight[i]), bool(pers.degenerate[i])]
        rows.append(row)
    write_csv(_out(args, "personalised.csv"), header, rows)
    dist = effect_distribution(pers)
    write_csv(_out(args, "effects.csv"), list(dist), zip(*dist.values()))


def cmd_dependence(args) -> None:
    forest, ds = _load_training(args)
    pers, query = _personalised(args, forest, ds)
    table = dependence_data(forest, query.view(), query.partition(), args.var,
                            args.effect, personalised=pers)
    write_csv(_out(args, f"dependence_{args.var}.csv"), table.columns, table.rows)


def cmd_importance(args) -> None:
    forest, ds = _load_training(args)
    report = variable_importance(forest, ds.view(), ds.partition(), seed=args.seed,
                                 repetitions=args.repetitions, threads=args.threads)
    write_csv(_out(args, "importance.csv"), ["variable", "vi", "rank"], report.ranked())


def cmd_test_improvement(args) -> None:
    ds = load_dataset(args.data, args.schema)
    grow_cfg, forest_cfg = load_config(args.config, args.seed)
    result = improvement_test(ds.family, ds.view(), ds.partition(), grow_cfg, forest_cfg,
                              B=args.B, mode=args.mode, seed=args.seed, threads=args.threads)
    write_json(result.to_dict(), _out(args, "improvement_test.json"))


def cmd_evaluate(args) -> None:
    forest, train = _load_training(args)
    test = _load_query(args.test, train.schema_config())
    truth = SimTruth(**_read_json(args.truth)) if args.truth else None
    if truth is not None and "z1" not in test.columns:
        raise SchemaError("a truth file needs the simulated column 'z1'")
    pers = personalise_new(forest, train.view(), test.partition(), threads=args.threads)
    result = {"format_version": 1, "n_train": train.n_rows, "n_test": test.n_rows}
    result["test_loglik"] = evaluate_out_of_sample(forest, train, test, truth, personalised=pers)
    result["train_forest_loglik"] = forest_loglik(forest, train.view(), threads=args.threads)
    if truth is not None:
        corr, spear = effect_recovery(pers, test, truth.n_vars)
        result["effect_cos_z1_correlation"] = corr
        result["noise_spearman"] = {f"z{j + 2}": float(s) for j, s in enumerate(spear)}
    write_json(result, _out(args, "evaluation.json"))


# --------------------------------------------------------------------- #
# argument parsing
# --------------------------------------------------------------------- #


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with 'grow' and 'forest' settings")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=_positive_int, default=1)
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="pmforest",
                                     description="Model-based forests for personalised "
                                                 "treatment effects.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, forest=False):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        if forest:
            p.add_argument("--forest", required=True, help="forest.json written by fit")
            p.add_argument("--data", required=True, help="training CSV used by fit")
            p.add_argument("--schema", help="override the schema stored in the forest")
        return p

    p = add("simulate", cmd_simulate, "draw a synthetic trial (train, test, schema, truth)")
    p.add_argument("--preset", required=True, choices=["appendixB"])
    p.add_argument("--n", type=_positive_int, default=600)
    p.add_argument("--amplitude", type=float, default=0.3)
    p.add_argument("--base-effect", type=float, default=0.2)

    p = add("fit", cmd_fit, "grow a forest and write forest.json")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)

    p = add("personalise", cmd_personalise, "write personalised.csv and effects.csv",
            forest=True)
    p.add_argument("--new", help="CSV of new subjects (default: out-of-bag training rows)")

    p = add("dependence", cmd_dependence, "write dependence_<var>.csv", forest=True)
    p.add_argument("--var", required=True)
    p.add_argument("--effect", choices=["beta", "delta-median"], default="beta")
    p.add_argument("--new", help="CSV of new subjects (default: out-of-bag training rows)")

    p = add("importance", cmd_importance, "write importance.csv", forest=True)
    p.add_argument("--repetitions", type=_positive_int, default=1)

    p = add("test-improvement", cmd_test_improvement, "write improvement_test.json")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--mode", choices=[m.value for m in SplitMode], default="both")
    p.add_argument("-B", type=_positive_int, default=50)

    p = add("evaluate", cmd_evaluate, "write evaluation.json (out-of-sample comparison)",
            forest=True)
    p.add_argument("--test", required=True)
    p.add_argument("--truth", help="truth.json from simulate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with np.errstate(all="ignore"):
            args.func(args)
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"pmforest: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, PMForestError) as exc:
        print(f"pmforest: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
