"""Command-line front end.

Exit codes: 0 success, 1 failed verification or unbalanced weights, 2 bad input.
Every file written starts with a ``# manifest {...}`` line recording the
subcommand, inputs, parameters, seed and tool version; identical invocations
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Sequence

from . import __version__
from .hierarchy import (
    Hierarchy,
    HierarchyError,
    flat_hierarchy,
    load_hierarchy,
    seven_leaf_hierarchy,
)
from .trainer import (
    Dataset,
    LinearModel,
    TrainConfig,
    TrainingDiverged,
    checkpoint_json,
    evaluate_model,
    generate_synthetic,
    holdout_split,
    train,
)
from .verify import run_checks, three_leaf_hierarchy
from .weighting import exponential_weights, hxe_weights, validate_balanced, weight_dump

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def resolve_tree(source: str) -> Hierarchy:
    """Load a tree file, or a stock tree named ``builtin:seven-leaf``,
    ``builtin:three-leaf`` or ``builtin:flat:K``."""
    if source.startswith("builtin:"):
        name = source[len("builtin:"):]
        if name == "seven-leaf":
            return seven_leaf_hierarchy()
        if name == "three-leaf":
            return three_leaf_hierarchy()
        if name.startswith("flat:") and name[5:].isdigit() and int(name[5:]) >= 1:
            return flat_hierarchy(int(name[5:]))
        raise InputError(f"unknown builtin tree {source!r}")
    try:
        return load_hierarchy(source)
    except OSError as exc:
        raise InputError(f"cannot read tree file: {exc}") from exc


def manifest_line(args: argparse.Namespace, outputs: Sequence[str]) -> str:
    skip = {"func", "out_dir", "out", "corrupt_weights"}
    params = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    doc = {
        "tool": "hierloss",
        "version": __version__,
        "subcommand": args.command,
        "params": params,
        "seed": getattr(args, "seed", None),
        "outputs": list(outputs),
    }
    return "# manifest " + json.dumps(doc, sort_keys=True) + "\n"


def _strip_comments(text: str) -> str:
    return "".join(ln for ln in text.splitlines(True) if not ln.startswith("#"))


def _emit(path: str | None, body: str) -> None:
    if path is None:
        sys.stdout.write(body)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(body)


def _out_path(args, name: str) -> str | None:
    if getattr(args, "out_dir", None):
        os.makedirs(args.out_dir, exist_ok=True)
        return os.path.join(args.out_dir, name)
    return None


def _load_dataset(path: str, tree: Hierarchy) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            ds = Dataset.from_csv(fh.read(), tree)
    except OSError as exc:
        raise InputError(f"cannot read dataset: {exc}") from exc
    if int(ds.labels.max()) > tree.n_leaves:
        raise InputError(f"dataset labels exceed the {tree.n_leaves} leaves of the tree")
    return ds


def _load_model(path: str) -> LinearModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.loads(_strip_comments(fh.read()))
        return LinearModel.from_dict(doc["model"])
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read checkpoint: {exc}") from exc


# -- subcommands -------------------------------------------------------------

def cmd_weights(args) -> int:
    tree = resolve_tree(args.tree)
    if args.scheme == "exponential":
        wh = exponential_weights(tree, args.q)
    else:
        wh = hxe_weights(tree, args.alpha, renormalize=not args.raw)
    out = _out_path(args, "weights.tsv")
    body = manifest_line(args, ["weights.tsv"] if out else []) + weight_dump(wh, args.full_precision)
    _emit(out, body)
    bad = validate_balanced(wh, 1e-12)
    if bad:
        print(f"UNBALANCED: leaves {bad} deviate from {wh.balance_constant!r}", file=sys.stderr)
        return EXIT_FAIL
    print(f"balanced: every leaf path sums to {wh.balance_constant!r} (tol 1e-12)", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    tree = resolve_tree(args.tree)
    ds = generate_synthetic(tree, args.per_class, args.dim, args.spread, args.seed)
    out = _out_path(args, "data.csv")
    _emit(out, manifest_line(args, ["data.csv"] if out else []) + ds.to_csv())
    return EXIT_OK


def _config(args) -> TrainConfig:
    return TrainConfig(
        loss=args.loss, q=args.q, alpha=args.alpha, epochs=args.epochs,
        lr=args.lr, batch_size=args.batch, seed=args.seed,
    )


def cmd_train(args) -> int:
    tree = resolve_tree(args.tree)
    config = _config(args)
    if args.data:
        data = _load_dataset(args.data, tree)
    else:
        data = generate_synthetic(tree, args.per_class, args.dim, args.spread, args.seed)
    if args.test_data:
        train_set, test_set = data, _load_dataset(args.test_data, tree)
    else:
        train_set, test_set = holdout_split(data, 0.2)
    if len(test_set) == 0:
        raise InputError("no held-out samples; provide --test-data or more samples per class")
    # the flat-tree baseline ignores the hierarchy entirely
    train_tree = flat_hierarchy(tree.n_leaves) if config.loss == "ce" else tree
    try:
        model = train(train_set, train_tree, config)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if test_set.dim != train_set.dim:
        raise InputError("train and test features differ in dimension")
    report, curve = evaluate_model(model, test_set, exponential_weights(tree, args.eval_q), args.threads)
    names = ["checkpoint.json", "report.json", "curve.csv"]
    head = manifest_line(args, names)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    _emit(os.path.join(out_dir, names[0]), head + checkpoint_json(model, config))
    _emit(os.path.join(out_dir, names[1]), head + report.to_json(args.full_precision) + "\n")
    _emit(os.path.join(out_dir, names[2]), head + curve.to_csv(args.full_precision))
    print(report.to_json(args.full_precision))
    return EXIT_OK


def _model_and_data(args):
    tree = resolve_tree(args.tree)
    model = _load_model(args.model)
    data = _load_dataset(args.data, tree)
    wh = exponential_weights(tree, args.eval_q)
    if model.class_weights.shape != (tree.n_leaves, data.dim):
        raise InputError(
            f"checkpoint shape {model.class_weights.shape} does not match "
            f"{tree.n_leaves} classes x {data.dim} features"
        )
    return model, data, wh


def cmd_evaluate(args) -> int:
    model, data, wh = _model_and_data(args)
    report, _ = evaluate_model(model, data, wh, args.threads)
    out = _out_path(args, "report.json")
    _emit(out, manifest_line(args, ["report.json"] if out else []) + report.to_json(args.full_precision) + "\n")
    return EXIT_OK


def cmd_curve(args) -> int:
    model, data, wh = _model_and_data(args)
    _, curve = evaluate_model(model, data, wh, args.threads)
    out = _out_path(args, "curve.csv")
    _emit(out, manifest_line(args, ["curve.csv"] if out else []) + curve.to_csv(args.full_precision))
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_checks(args.scale, args.include_naive, args.seed, args.corrupt_weights)
    body = manifest_line(args, []) + "".join(r.line() + "\n" for r in results)
    out = _out_path(args, "verify.txt")
    _emit(out, body)
    if out:
        sys.stdout.write(body)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _positive_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError("must be finite")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hierloss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hierloss {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out-dir", default=None)
    common.add_argument("--full-precision", action="store_true")

    tree = argparse.ArgumentParser(add_help=False)
    tree.add_argument("--tree", required=True, help="tree file or builtin:seven-leaf / builtin:flat:K")

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument("--q", type=_positive_float, default=0.9)
    hyper.add_argument("--alpha", type=_positive_float, default=0.1)

    s = sub.add_parser("weights", parents=[common, tree, hyper], help="dump node weights")
    s.add_argument("--scheme", choices=["exponential", "hxe"], default="exponential")
    s.add_argument("--raw", action="store_true", help="hxe: keep the exp(-alpha) balance constant")
    s.set_defaults(func=cmd_weights)

    synth = argparse.ArgumentParser(add_help=False)
    synth.add_argument("--per-class", type=int, default=25)
    synth.add_argument("--dim", type=int, default=20)
    synth.add_argument("--spread", type=float, default=2.0)

    s = sub.add_parser("synth", parents=[common, tree, synth], help="write a synthetic dataset")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common, tree, hyper, synth], help="fit a linear model")
    s.add_argument("--data", default=None, help="CSV dataset (default: synthetic)")
    s.add_argument("--test-data", default=None)
    s.add_argument("--loss", choices=["ce", "hier", "hxe"], default="hier")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=0.5)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--eval-q", type=float, default=1.0, help="growth rate of the evaluation metric tree")
    s.set_defaults(func=cmd_train)

    for name, fn, what in (("evaluate", cmd_evaluate, "evaluation report"), ("curve", cmd_curve, "coarsening curve")):
        s = sub.add_parser(name, parents=[common, tree], help=f"{what} of a checkpoint")
        s.add_argument("--model", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--eval-q", type=float, default=1.0)
        s.set_defaults(func=fn)

    s = sub.add_parser("verify", parents=[common], help="run the oracle self-checks")
    s.add_argument("--scale", choices=["quick", "default", "full"], default="default")
    s.add_argument("--include-naive", action="store_true")
    s.add_argument("--corrupt-weights", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, HierarchyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
